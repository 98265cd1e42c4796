//! Dense 2x2 real and complex matrices with the closed-form exponential and
//! logarithm used for trace-free generators.
//!
//! For trace-free `B` the exponential reduces to scalar functions of
//! `delta = -det B`:
//!
//! `exp(B) = cosh(sqrt(delta)) I + sinhc(sqrt(delta)) B`
//!
//! where `sinhc(s) = sinh(s)/s`. Both scalar factors are even functions of
//! `sqrt(delta)`, so they are evaluated directly in `delta`, switching to a
//! short Taylor series when `|delta|` is tiny to avoid cancellation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Real 2x2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

/// Complex 2x2 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CMat2(pub [[Complex64; 2]; 2]);

/// Series switch-over for the exponential/logarithm scalar factors.
const SERIES_CUTOFF: f64 = 1e-8;

/// cosh(sqrt(d)) as an entire function of d (d may be negative).
fn cosh_sqrt(d: f64) -> f64 {
    if d.abs() < SERIES_CUTOFF {
        // 6-term series in d: sum d^n / (2n)!
        let mut term = 1.0;
        let mut acc = 1.0;
        for n in 1..6 {
            term *= d / ((2 * n - 1) as f64 * (2 * n) as f64);
            acc += term;
        }
        acc
    } else if d > 0.0 {
        d.sqrt().cosh()
    } else {
        (-d).sqrt().cos()
    }
}

/// sinh(sqrt(d))/sqrt(d) as an entire function of d.
fn sinhc_sqrt(d: f64) -> f64 {
    if d.abs() < SERIES_CUTOFF {
        // 6-term series in d: sum d^n / (2n+1)!
        let mut term = 1.0;
        let mut acc = 1.0;
        for n in 1..6 {
            term *= d / ((2 * n) as f64 * (2 * n + 1) as f64);
            acc += term;
        }
        acc
    } else if d > 0.0 {
        let s = d.sqrt();
        s.sinh() / s
    } else {
        let s = (-d).sqrt();
        s.sin() / s
    }
}

/// sqrt(d)/sinh(sqrt(d)), the reciprocal scalar used by the logarithm.
fn inv_sinhc_sqrt(d: f64) -> f64 {
    if d.abs() < SERIES_CUTOFF {
        // 1/sinhc = 1 - d/6 + 7 d^2/360 - ...
        1.0 - d / 6.0 + 7.0 * d * d / 360.0
    } else {
        1.0 / sinhc_sqrt(d)
    }
}

impl Mat2 {
    pub const ZERO: Mat2 = Mat2([[0.0, 0.0], [0.0, 0.0]]);
    pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Mat2 {
        Mat2([[a, b], [c, d]])
    }

    /// Diagonal matrix.
    pub fn diag(a: f64, d: f64) -> Mat2 {
        Mat2([[a, 0.0], [0.0, d]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Frobenius norm.
    pub fn norm_fro(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    /// Operator 2-norm (largest singular value).
    pub fn norm_op(&self) -> f64 {
        self.singular_values().0
    }

    /// Singular values (s1 >= s2 >= 0).
    pub fn singular_values(&self) -> (f64, f64) {
        let a = self.norm_fro().powi(2);
        let d = self.det().abs();
        let disc = (a * a - 4.0 * d * d).max(0.0).sqrt();
        let s1sq = 0.5 * (a + disc);
        let s1 = s1sq.sqrt();
        let s2 = if s1 > 0.0 { d / s1 } else { 0.0 };
        (s1, s2)
    }

    /// Direction (angle in turns, modulo 1/2) of the most-expanded input
    /// vector: the right singular vector for the top singular value.
    pub fn expanding_direction_turns(&self) -> f64 {
        // Eigenvector of M^T M for its larger eigenvalue.
        let m = self.transpose().mul(self);
        let (a, b, c) = (m.0[0][0], m.0[0][1], m.0[1][1]);
        let tr = a + c;
        let disc = ((a - c) * 0.5).hypot(b);
        let l1 = 0.5 * tr + disc;
        // (b, l1 - a) and (l1 - c, b) both span the eigenvector; pick the
        // numerically larger.
        let v = if (l1 - a).abs() > (l1 - c).abs() {
            (b, l1 - a)
        } else {
            (l1 - c, b)
        };
        let ang = v.1.atan2(v.0) / (2.0 * std::f64::consts::PI);
        ang.rem_euclid(0.5)
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2([
            [self.0[0][0], self.0[1][0]],
            [self.0[0][1], self.0[1][1]],
        ])
    }

    pub fn add(&self, o: &Mat2) -> Mat2 {
        let mut r = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] = self.0[i][j] + o.0[i][j];
            }
        }
        r
    }

    pub fn sub(&self, o: &Mat2) -> Mat2 {
        let mut r = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] = self.0[i][j] - o.0[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: f64) -> Mat2 {
        let mut r = *self;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] *= s;
            }
        }
        r
    }

    pub fn mul(&self, o: &Mat2) -> Mat2 {
        let mut r = Mat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j];
            }
        }
        r
    }

    pub fn mul_vec(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    /// Inverse via the adjugate; intended for well-conditioned matrices.
    pub fn inverse(&self) -> Mat2 {
        let d = self.det();
        Mat2([
            [self.0[1][1] / d, -self.0[0][1] / d],
            [-self.0[1][0] / d, self.0[0][0] / d],
        ])
    }

    /// Exact inverse for unit-determinant matrices (adjugate).
    pub fn inverse_unimodular(&self) -> Mat2 {
        Mat2([
            [self.0[1][1], -self.0[0][1]],
            [-self.0[1][0], self.0[0][0]],
        ])
    }

    /// Exponential of a trace-free matrix via the closed form.
    ///
    /// The trace is not checked here; callers guarantee it (generators in
    /// this crate are trace-free by construction).
    pub fn exp_tracefree(&self) -> Mat2 {
        let d = -self.det();
        let c = cosh_sqrt(d);
        let s = sinhc_sqrt(d);
        Mat2([
            [c + s * self.0[0][0], s * self.0[0][1]],
            [s * self.0[1][0], c + s * self.0[1][1]],
        ])
    }

    /// Principal logarithm of a unimodular matrix near the identity: returns
    /// the unique trace-free `X` with `exp(X) = M` and rotation part in
    /// (-1/2, 1/2) turns. Fails when `trace(M) <= -2` (half-turn branch
    /// point) or when the determinant strays far from 1.
    pub fn log_unimodular(&self) -> crate::Result<Mat2> {
        let det = self.det();
        if (det - 1.0).abs() > 1e-6 {
            return Err(crate::Error::Numerical(format!(
                "matrix logarithm needs det = 1, got deviation {:.3e}",
                det - 1.0
            )));
        }
        let c = 0.5 * self.trace();
        // A trace-free exponential has trace 2 cosh / 2 cos >= -2, with -2
        // attained only at the half-turn branch point.
        if c <= -1.0 + 1e-12 {
            return Err(crate::Error::Numerical(format!(
                "matrix logarithm at or beyond the half-turn branch point (trace {:.6})",
                self.trace()
            )));
        }
        let b = Mat2([
            [self.0[0][0] - c, self.0[0][1]],
            [self.0[1][0], self.0[1][1] - c],
        ]);
        // sinh(s)^2 = -det(B) =: q, cosh(s) = c, with X = B * s/sinh(s).
        // Unimodularity gives q = c^2 - 1, so |q| small forces c near +1
        // here (c near -1 was rejected above).
        let q = -b.det();
        let factor = if q.abs() < SERIES_CUTOFF * SERIES_CUTOFF {
            inv_sinhc_sqrt(q)
        } else if q >= 0.0 {
            let s = q.sqrt().asinh();
            s / q.sqrt()
        } else {
            // Elliptic: sin(y) = sqrt(-q), cos(y) = c; atan2 keeps the
            // principal branch y in (0, pi) for c of either sign.
            let siny = (-q).sqrt();
            let y = siny.atan2(c);
            y / siny
        };
        Ok(b.scale(factor))
    }

    pub fn to_complex(&self) -> CMat2 {
        CMat2([
            [
                Complex64::new(self.0[0][0], 0.0),
                Complex64::new(self.0[0][1], 0.0),
            ],
            [
                Complex64::new(self.0[1][0], 0.0),
                Complex64::new(self.0[1][1], 0.0),
            ],
        ])
    }
}

impl CMat2 {
    pub const ZERO: CMat2 = CMat2([
        [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)],
    ]);
    pub const IDENTITY: CMat2 = CMat2([
        [Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0)],
        [Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)],
    ]);

    pub fn trace(&self) -> Complex64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn det(&self) -> Complex64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn norm_fro(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|x| x.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn add(&self, o: &CMat2) -> CMat2 {
        let mut r = CMat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] = self.0[i][j] + o.0[i][j];
            }
        }
        r
    }

    pub fn sub(&self, o: &CMat2) -> CMat2 {
        let mut r = CMat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] = self.0[i][j] - o.0[i][j];
            }
        }
        r
    }

    pub fn scale(&self, s: Complex64) -> CMat2 {
        let mut r = *self;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] *= s;
            }
        }
        r
    }

    pub fn mul(&self, o: &CMat2) -> CMat2 {
        let mut r = CMat2::ZERO;
        for i in 0..2 {
            for j in 0..2 {
                r.0[i][j] = self.0[i][0] * o.0[0][j] + self.0[i][1] * o.0[1][j];
            }
        }
        r
    }

    pub fn inverse(&self) -> CMat2 {
        let d = self.det();
        CMat2([
            [self.0[1][1] / d, -self.0[0][1] / d],
            [-self.0[1][0] / d, self.0[0][0] / d],
        ])
    }

    /// Exponential of a trace-free complex matrix via the same closed form,
    /// with complex scalar factors.
    pub fn exp_tracefree(&self) -> CMat2 {
        let d = -self.det();
        let (c, s) = if d.norm() < SERIES_CUTOFF {
            let mut tc = Complex64::new(1.0, 0.0);
            let mut ts = Complex64::new(1.0, 0.0);
            let mut accc = tc;
            let mut accs = ts;
            for n in 1..6 {
                tc *= d / ((2 * n - 1) as f64 * (2 * n) as f64);
                ts *= d / ((2 * n) as f64 * (2 * n + 1) as f64);
                accc += tc;
                accs += ts;
            }
            (accc, accs)
        } else {
            let sq = d.sqrt();
            (sq.cosh(), sq.sinh() / sq)
        };
        CMat2([
            [c + s * self.0[0][0], s * self.0[0][1]],
            [s * self.0[1][0], c + s * self.0[1][1]],
        ])
    }

    pub fn real_part(&self) -> Mat2 {
        Mat2([
            [self.0[0][0].re, self.0[0][1].re],
            [self.0[1][0].re, self.0[1][1].re],
        ])
    }

    /// Largest imaginary-part magnitude, used to check that a nominally real
    /// result really is real.
    pub fn max_imag(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|x| x.im.abs())
            .fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: &Mat2, b: &Mat2, tol: f64) {
        assert!(
            a.sub(b).norm_fro() <= tol,
            "matrices differ by {:.3e}:\n{:?}\n{:?}",
            a.sub(b).norm_fro(),
            a,
            b
        );
    }

    /// Scalar-series oracle: exp via 60-term Taylor sum on the matrix itself.
    fn exp_taylor(m: &Mat2) -> Mat2 {
        let mut acc = Mat2::IDENTITY;
        let mut term = Mat2::IDENTITY;
        for n in 1..60 {
            term = term.mul(m).scale(1.0 / n as f64);
            acc = acc.add(&term);
        }
        acc
    }

    #[test]
    fn exp_matches_taylor_series_across_all_types() {
        let cases = [
            Mat2::new(0.3, 0.7, -0.2, -0.3),  // hyperbolic-ish
            Mat2::new(0.0, 1.5, -1.5, 0.0),   // elliptic
            Mat2::new(0.0, 1.0, 0.0, 0.0),    // nilpotent
            Mat2::new(0.1, 2.0, -0.9, -0.1),  // mixed
            Mat2::new(1e-5, 2e-5, 3e-5, -1e-5), // tiny
        ];
        for m in &cases {
            assert_close(&m.exp_tracefree(), &exp_taylor(m), 1e-13);
        }
    }

    #[test]
    fn exp_near_zero_delta_uses_series_smoothly() {
        // delta = -det B straddling the series cutoff must be continuous.
        for &eps in &[1e-10f64, 1e-9, 1e-8, 1e-7] {
            let m = Mat2::new(0.0, eps, eps, 0.0); // delta = eps^2
            let e = m.exp_tracefree();
            assert_close(&e, &exp_taylor(&m), 1e-15);
            assert!((e.det() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn exp_preserves_unit_determinant() {
        let m = Mat2::new(0.4, -1.1, 0.8, -0.4);
        assert!((m.exp_tracefree().det() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn log_inverts_exp_on_all_branches() {
        let cases = [
            Mat2::new(0.2, 0.5, -0.1, -0.2),
            Mat2::new(0.0, 2.0, -2.0, 0.0),   // rotation by 2 rad < half turn
            Mat2::new(0.0, 1.0, 0.0, 0.0),    // parabolic
            Mat2::new(0.7, 0.3, 0.2, -0.7),   // hyperbolic
            Mat2::new(0.0, 1e-9, -1e-9, 0.0), // near identity
        ];
        for m in &cases {
            let back = m.exp_tracefree().log_unimodular().unwrap();
            assert_close(&back, m, 1e-12);
            assert!(back.trace().abs() < 1e-13);
        }
    }

    #[test]
    fn log_rejects_half_turn() {
        let m = Mat2::new(-1.0, 0.0, 0.0, -1.0);
        assert!(m.log_unimodular().is_err());
    }

    #[test]
    fn singular_values_match_frobenius_and_det() {
        let m = Mat2::new(2.0, 1.0, 0.5, 0.8);
        let (s1, s2) = m.singular_values();
        assert!((s1 * s2 - m.det().abs()).abs() < 1e-12);
        assert!((s1 * s1 + s2 * s2 - m.norm_fro().powi(2)).abs() < 1e-12);
        assert!(s1 >= s2);
    }

    #[test]
    fn expanding_direction_of_diagonal_stretch_is_axis() {
        let m = Mat2::diag(3.0, 1.0 / 3.0);
        let d = m.expanding_direction_turns();
        assert!(d.min((0.5 - d).abs()) < 1e-12, "direction {d}");
    }

    #[test]
    fn inverse_unimodular_matches_inverse() {
        let m = Mat2::new(0.3, 0.7, -0.2, -0.3).exp_tracefree();
        assert_close(&m.inverse_unimodular(), &m.inverse(), 1e-14);
        assert_close(&m.mul(&m.inverse_unimodular()), &Mat2::IDENTITY, 1e-14);
    }

    #[test]
    fn complex_exp_agrees_with_real_exp_on_real_input() {
        let m = Mat2::new(0.3, 0.7, -0.2, -0.3);
        let ec = m.to_complex().exp_tracefree();
        assert!(ec.max_imag() < 1e-15);
        assert_close(&ec.real_part(), &m.exp_tracefree(), 1e-14);
    }
}
