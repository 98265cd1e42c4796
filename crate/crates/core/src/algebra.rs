//! Classification of real trace-free 2x2 matrices up to orientation-
//! preserving (determinant 1) conjugation, with deterministic canonical
//! conjugators, and the complexified frame that diagonalizes rotations.
//!
//! Conventions: `J = [[0, 1], [-1, 0]]`, so `exp(2 pi rho J)` is the
//! rotation by `-rho` turns (clockwise for positive `rho`). `J` and `-J` are
//! *not* conjugate inside the determinant-1 class, so the elliptic invariant
//! `rho` is signed. `H = diag(1, -1)`. The parabolic class splits into two
//! orbits, represented by `+[[0,1],[0,0]]` and `-[[0,1],[0,0]]`.

use num_complex::Complex64;

use crate::mat2::{CMat2, Mat2};
use crate::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

/// `[[0, 1], [-1, 0]]`: infinitesimal clockwise rotation.
pub fn j_matrix() -> Mat2 {
    Mat2::new(0.0, 1.0, -1.0, 0.0)
}

/// `diag(1, -1)`.
pub fn h_matrix() -> Mat2 {
    Mat2::diag(1.0, -1.0)
}

/// Upper nilpotent `[[0, 1], [0, 0]]`.
pub fn e12() -> Mat2 {
    Mat2::new(0.0, 1.0, 0.0, 0.0)
}

/// Counterclockwise rotation by `turns` turns.
pub fn rotation(turns: f64) -> Mat2 {
    let a = TWO_PI * turns;
    Mat2::new(a.cos(), -a.sin(), a.sin(), a.cos())
}

/// Frame change `M = [[1, -i], [1, i]]` with `M J M^-1 = diag(i, -i)`:
/// in this frame rotations are diagonal and the trace-free symmetry reads
/// `[[i c, a - i b], [a + i b, -i c]]` with `a, b, c` real.
pub fn frame_m() -> CMat2 {
    CMat2([
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, -1.0)],
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)],
    ])
}

/// Inverse of [`frame_m`]: `[[1/2, 1/2], [i/2, -i/2]]`.
pub fn frame_m_inv() -> CMat2 {
    CMat2([
        [Complex64::new(0.5, 0.0), Complex64::new(0.5, 0.0)],
        [Complex64::new(0.0, 0.5), Complex64::new(0.0, -0.5)],
    ])
}

/// Conjugation class of a real trace-free 2x2 matrix under determinant-1
/// conjugation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sl2Class {
    /// The zero matrix.
    Zero,
    /// Conjugate to `2 pi rho J`; `rho` is signed (orientation matters).
    Elliptic { rho: f64 },
    /// Conjugate to `2 pi lambda H` with `lambda > 0`.
    Hyperbolic { lambda: f64 },
    /// Conjugate to `sign * [[0, 1], [0, 0]]`, `sign = +-1`.
    Parabolic { sign: f64 },
}

impl Sl2Class {
    /// The canonical representative of the class.
    pub fn normal_form(&self) -> Mat2 {
        match self {
            Sl2Class::Zero => Mat2::ZERO,
            Sl2Class::Elliptic { rho } => j_matrix().scale(TWO_PI * rho),
            Sl2Class::Hyperbolic { lambda } => h_matrix().scale(TWO_PI * lambda),
            Sl2Class::Parabolic { sign } => e12().scale(*sign),
        }
    }
}

/// A class together with a determinant-1 matrix `p` satisfying
/// `p a p^-1 = class.normal_form()`.
#[derive(Debug, Clone)]
pub struct Classification {
    pub class: Sl2Class,
    pub conjugator: Mat2,
}

/// Square root of a symmetric positive-definite 2x2 matrix.
fn spd_sqrt(m: &Mat2) -> Mat2 {
    let det = m.det();
    let s = det.sqrt();
    let t = (m.trace() + 2.0 * s).sqrt();
    m.add(&Mat2::diag(s, s)).scale(1.0 / t)
}

/// Fix the overall sign of a determinant-1 conjugator (`p` and `-p` act
/// identically): make the first nonzero entry positive.
fn canonical_sign(p: Mat2) -> Mat2 {
    for v in [p.0[0][0], p.0[0][1], p.0[1][0], p.0[1][1]] {
        if v != 0.0 {
            return if v < 0.0 { p.scale(-1.0) } else { p };
        }
    }
    p
}

/// Classify a real trace-free matrix and produce the canonical
/// determinant-1 conjugator onto its normal form.
///
/// Determinism: the elliptic conjugator is the unique symmetric
/// positive-definite one; the hyperbolic conjugator minimizes the Frobenius
/// norm within its diagonal stabilizer orbit; signs are fixed by making the
/// first nonzero entry positive. `|det|` below `1e-10 * |a|_F^2` is treated
/// as zero (parabolic), which also routes barely-elliptic matrices through
/// the parabolic branch instead of producing a huge conjugator.
pub fn classify(a: &Mat2) -> Result<Classification> {
    let norm = a.norm_fro();
    let trace_tol = 1e-9 * (1.0 + norm);
    if a.trace().abs() > trace_tol {
        return Err(Error::NotTraceFree {
            trace: a.trace(),
            tol: trace_tol,
        });
    }
    if norm < 1e-14 {
        return Ok(Classification {
            class: Sl2Class::Zero,
            conjugator: Mat2::IDENTITY,
        });
    }
    // Work with the exactly trace-free part; the validated deviation is
    // below every other tolerance in play.
    let half_tr = 0.5 * a.trace();
    let a = a.sub(&Mat2::diag(half_tr, half_tr));
    let det = a.det();
    let tol_det = 1e-10 * norm * norm;

    if det > tol_det {
        // Elliptic: rho signed by the rotation sense, which `conjugation by
        // determinant 1` cannot flip.
        let rho = -a.0[1][0].signum() * det.sqrt() / TWO_PI;
        let ahat = a.scale(1.0 / (TWO_PI * rho));
        // p0^-1 = [u, -ahat u] conjugates ahat to J and has positive
        // determinant for every u != 0; take u = e1 and rescale to det 1.
        let u = [1.0, 0.0];
        let w = [-ahat.0[0][0] * u[0], -ahat.0[1][0] * u[0]];
        let p0_inv = Mat2::new(u[0], w[0], u[1], w[1]);
        let d = p0_inv.det();
        let p0 = p0_inv.scale(1.0 / d.sqrt()).inverse_unimodular();
        // The valid conjugators form an SO(2) coset; its unique symmetric
        // positive-definite member is the polar factor of any of them.
        let p = spd_sqrt(&p0.transpose().mul(&p0));
        return Ok(Classification {
            class: Sl2Class::Elliptic { rho },
            conjugator: p,
        });
    }

    if det < -tol_det {
        let lambda = (-det).sqrt() / TWO_PI;
        let ev = TWO_PI * lambda;
        // Row-space eigenvectors: (a - ev) v+ = 0, (a + ev) v- = 0. Each
        // shifted matrix has rank 1; take the kernel direction from its
        // larger row.
        let kernel = |m: &Mat2| -> [f64; 2] {
            let r1 = [m.0[0][0], m.0[0][1]];
            let r2 = [m.0[1][0], m.0[1][1]];
            let n1 = r1[0] * r1[0] + r1[1] * r1[1];
            let n2 = r2[0] * r2[0] + r2[1] * r2[1];
            let r = if n1 >= n2 { r1 } else { r2 };
            let n = (r[0] * r[0] + r[1] * r[1]).sqrt();
            [r[1] / n, -r[0] / n]
        };
        let vp = kernel(&a.sub(&Mat2::diag(ev, ev)));
        let vm = kernel(&a.add(&Mat2::diag(ev, ev)));
        let mut pinv = Mat2::new(vp[0], vm[0], vp[1], vm[1]);
        let mut d = pinv.det();
        if d < 0.0 {
            pinv = Mat2::new(vp[0], -vm[0], vp[1], -vm[1]);
            d = -d;
        }
        let p0 = pinv.scale(1.0 / d.sqrt()).inverse_unimodular();
        // Stabilizer freedom diag(c, 1/c): minimize the Frobenius norm,
        // attained where the two row norms balance.
        let r1 = p0.0[0][0] * p0.0[0][0] + p0.0[0][1] * p0.0[0][1];
        let r2 = p0.0[1][0] * p0.0[1][0] + p0.0[1][1] * p0.0[1][1];
        let c = (r2 / r1).powf(0.25);
        let p = canonical_sign(Mat2::diag(c, 1.0 / c).mul(&p0));
        return Ok(Classification {
            class: Sl2Class::Hyperbolic { lambda },
            conjugator: p,
        });
    }

    // Parabolic (nilpotent up to tolerance). Which of the two orbits is
    // detected by the sign of tr(J a), an invariant of determinant-1
    // conjugation that is negative on the orbit of [[0,1],[0,0]].
    let sign = if j_matrix().mul(&a).trace() < 0.0 { 1.0 } else { -1.0 };
    // u spans the kernel (= image) of a; w = -J u then satisfies
    // a w = s u with s != 0 and det[u, w] > 0.
    let r1 = [a.0[0][0], a.0[0][1]];
    let r2 = [a.0[1][0], a.0[1][1]];
    let n1 = r1[0] * r1[0] + r1[1] * r1[1];
    let n2 = r2[0] * r2[0] + r2[1] * r2[1];
    let r = if n1 >= n2 { r1 } else { r2 };
    let nr = (r[0] * r[0] + r[1] * r[1]).sqrt();
    let u = [r[1] / nr, -r[0] / nr];
    let w = [u[1], -u[0]]; // -J u
    let aw = a.mul_vec(w);
    // a w = s u: read s off the larger component of u.
    let s = if u[0].abs() >= u[1].abs() {
        aw[0] / u[0]
    } else {
        aw[1] / u[1]
    };
    let det_uw = u[0] * w[1] - u[1] * w[0]; // = 1 by construction
    let b2 = sign / (s * det_uw);
    if !(b2 > 0.0) {
        return Err(Error::Numerical(format!(
            "parabolic conjugator scale failed: sign {sign}, s {s}"
        )));
    }
    let b = b2.sqrt();
    let asc = b * s / sign; // scale for the kernel column
    let pinv = Mat2::new(asc * u[0], b * w[0], asc * u[1], b * w[1]);
    let p = canonical_sign(pinv.inverse_unimodular());
    Ok(Classification {
        class: Sl2Class::Parabolic { sign },
        conjugator: p,
    })
}

/// Move a real matrix into the diagonal frame: `M a M^-1`.
pub fn to_frame(a: &Mat2) -> CMat2 {
    frame_m().mul(&a.to_complex()).mul(&frame_m_inv())
}

/// Return from the diagonal frame: `M^-1 z M` (real part; the imaginary
/// part vanishes when `z` respects the frame symmetry).
pub fn from_frame(z: &CMat2) -> CMat2 {
    frame_m_inv().mul(z).mul(&frame_m())
}
