//! Embedding a quasi-periodic cocycle into a quasi-periodic linear flow.
//!
//! The flow lives on `T^d = T x T^{d-1}` with frequency vector `(1, mu)` and
//! generator `A + F(x)`; its time-one map over the section `{x_1 = 0}` is a
//! cocycle `theta -> Phi^1(0, theta)` over the rotation by `mu`. Embedding a
//! near-constant cocycle `theta -> e^A e^{G(theta)}` means solving
//!
//! ```text
//!     Phi^1(0, theta) = e^A e^{G(theta)}
//! ```
//!
//! for the field `F`. The linearization of this equation at `F = 0` is the
//! averaged conjugation along flow lines,
//!
//! ```text
//!     (L F)(theta) = \int_0^1 e^{-A s} F(s, theta + s mu) e^{A s} ds,
//! ```
//!
//! which acts mode-by-mode: in the eigenframe of `ad A` each matrix entry is
//! hit by a scalar transfer operator whose Fourier multiplier is
//! `psi(4 pi lambda + 2 pi i (k_1 + <k, mu> + 2 rho))` with
//! `psi(z) = (e^z - 1)/z`. For every base mode `k` there is exactly one
//! first-axis index -- the negated nearest integer to `<k, mu> + 2 rho` --
//! where that multiplier is uniformly far from zero, so `L` has an explicit
//! inverse on series supported on those sites. This module implements the
//! scalar transfer operator and its site-supported inverse, the matrix-level
//! inverses of `L` in the elliptic, hyperbolic, and flat (zero constant
//! part) frames, a quasi-Newton solver for the nonlinear equation with a
//! rescaled route for parabolic constants, and the samplers that transport
//! conjugacies between a flow and its time-one section.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::algebra::{self, classify, Sl2Class};
use crate::flows::QPSystem;
use crate::fourier::{grid_points, MatSeries, MatTag, TrigSeries};
use crate::mat2::{CMat2, Mat2};
use crate::{Error, Result, SCHEMA};

const TAU: f64 = std::f64::consts::TAU;
const PI: f64 = std::f64::consts::PI;

/// Offsets this close to zero are treated as exact resonances: the
/// transfer multiplier is 1 there and the coefficient is copied verbatim.
const RESONANT_TOL: f64 = 1e-12;

/// Grid offset used for verification probes, deliberately incommensurate
/// with the collocation lattice.
const PROBE_OFFSET: f64 = 0.2183;

fn l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Exponential of the trace-centered part of a constant matrix (the input
/// is trace-free up to validation slack; centering keeps the closed-form
/// exponential exactly unimodular).
fn exp_constant(a: &Mat2) -> Mat2 {
    let t = 0.5 * a.trace();
    Mat2::new(a.0[0][0] - t, a.0[0][1], a.0[1][0], a.0[1][1] - t).exp_tracefree()
}

// ---------------------------------------------------------------------------
// Scalar transfer operator
// ---------------------------------------------------------------------------

/// Fourier multiplier of the flow-line average: `psi(z) = (e^z - 1)/z` at
/// `z = 4 pi lambda + 2 pi i offset`, with the removable singularity at
/// `z = 0` filled by `psi(0) = 1` (series evaluation near zero).
pub fn transfer_factor(lambda: f64, offset: f64) -> Complex64 {
    let z = Complex64::new(2.0 * TAU * lambda, TAU * offset);
    if z.norm() < 1e-2 {
        // psi(z) = sum_{n>=0} z^n / (n+1)!; ten terms reach machine
        // precision for |z| < 1e-2.
        let coeff: [f64; 10] = [
            1.0,
            1.0 / 2.0,
            1.0 / 6.0,
            1.0 / 24.0,
            1.0 / 120.0,
            1.0 / 720.0,
            1.0 / 5040.0,
            1.0 / 40320.0,
            1.0 / 362880.0,
            1.0 / 3628800.0,
        ];
        let mut acc = Complex64::new(coeff[9], 0.0);
        for c in coeff[..9].iter().rev() {
            acc = acc * z + c;
        }
        acc
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Uniform bound for `|1/psi|` over offsets in `[-1/2, 1/2]`: `pi/2` when
/// `lambda = 0` (attained only at offset `1/2`), and
/// `pi sqrt(16 lambda^2 + 1) / |e^{4 pi lambda} - 1|` otherwise.
pub fn inverse_factor_bound(lambda: f64) -> f64 {
    if lambda == 0.0 {
        0.5 * PI
    } else {
        let denom = (2.0 * TAU * lambda).exp_m1().abs();
        PI * (16.0 * lambda * lambda + 1.0).sqrt() / denom
    }
}

// ---------------------------------------------------------------------------
// Resonant sites
// ---------------------------------------------------------------------------

/// The unique first-axis index where the transfer multiplier of a base mode
/// is uniformly invertible, together with the resulting phase offset.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceIndex {
    /// First-axis Fourier index of the supporting site: the negated nearest
    /// integer to `<k, mu> + 2 rho` (ties round to the smaller integer).
    pub site: i64,
    /// `site + <k, mu> + 2 rho`, always in `[-1/2, 1/2]`; the tie-break puts
    /// exact half-integers at `+1/2`.
    pub offset: f64,
}

/// Locate the resonant site of a stored base mode `k` (physical frequencies
/// are `k_j / period_j`).
pub fn resonance_index(k: &[i32], periods: &[u8], mu: &[f64], rho: f64) -> Result<ResonanceIndex> {
    if k.len() != mu.len() || periods.len() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: k.len().max(periods.len()),
            context: "resonance index",
        });
    }
    let y: f64 = k
        .iter()
        .zip(periods)
        .zip(mu)
        .map(|((kj, p), m)| (*kj as f64 / *p as f64) * m)
        .sum::<f64>()
        + 2.0 * rho;
    // Nearest integer with ties to the smaller one: ceil(y - 1/2).
    let k_tilde = (y - 0.5).ceil();
    if !k_tilde.is_finite() || k_tilde.abs() > 2_147_483_000.0 {
        return Err(Error::InvalidArgument(format!(
            "resonant site {k_tilde} out of representable range"
        )));
    }
    Ok(ResonanceIndex {
        site: -(k_tilde as i64),
        offset: y - k_tilde,
    })
}

/// A Fourier series on `T^d` supported on resonant sites: one coefficient
/// per base mode `k` on `T^{d-1}`, sitting at first-axis index `site(k)`.
/// This is the natural range of the inverse transfer operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonantSeries {
    mu: Vec<f64>,
    rho: f64,
    periods: Vec<u8>,
    coeffs: BTreeMap<Vec<i32>, Complex64>,
}

impl ResonantSeries {
    /// Assemble from explicit base-mode coefficients.
    pub fn from_coeffs(
        mu: &[f64],
        rho: f64,
        periods: &[u8],
        coeffs: impl IntoIterator<Item = (Vec<i32>, Complex64)>,
    ) -> Result<ResonantSeries> {
        if periods.len() != mu.len() {
            return Err(Error::DimensionMismatch {
                expected: mu.len(),
                got: periods.len(),
                context: "resonant series periods",
            });
        }
        let mut map = BTreeMap::new();
        for (k, c) in coeffs {
            if k.len() != mu.len() {
                return Err(Error::DimensionMismatch {
                    expected: mu.len(),
                    got: k.len(),
                    context: "resonant series mode index",
                });
            }
            map.insert(k, c);
        }
        Ok(ResonantSeries {
            mu: mu.to_vec(),
            rho,
            periods: periods.to_vec(),
            coeffs: map,
        })
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn periods(&self) -> &[u8] {
        &self.periods
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<i32>, Complex64> {
        &self.coeffs
    }

    /// Resonant site of a stored base mode of this series.
    pub fn index(&self, k: &[i32]) -> Result<ResonanceIndex> {
        resonance_index(k, &self.periods, &self.mu, self.rho)
    }

    /// Weighted coefficient norm `sum |c(k)| e^{2 pi h (1 + |mu|_1) |k|_1}`
    /// with physical mode sizes; evaluating it at `h / (1 + |mu|_1)` makes it
    /// directly comparable with the plain width-`h` norm of the input of the
    /// inverse transfer operator.
    pub fn weighted_norm(&self, h: f64) -> f64 {
        let w = 1.0 + l1(&self.mu);
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let k1: f64 = k
                    .iter()
                    .zip(&self.periods)
                    .map(|(kj, p)| kj.abs() as f64 / *p as f64)
                    .sum();
                c.norm() * (TAU * h * w * k1).exp()
            })
            .sum()
    }

    /// Expand into a plain series on `T^d` (first axis has period one) with
    /// each coefficient placed at its resonant site.
    pub fn to_trig(&self) -> Result<TrigSeries> {
        let mut periods = Vec::with_capacity(self.periods.len() + 1);
        periods.push(1u8);
        periods.extend_from_slice(&self.periods);
        let mut out = TrigSeries::zero(&periods)?;
        for (k, c) in &self.coeffs {
            let ri = self.index(k)?;
            let mut idx = Vec::with_capacity(k.len() + 1);
            idx.push(ri.site as i32);
            idx.extend_from_slice(k);
            let cur = out.get(&idx);
            out.insert(idx, cur + c)?;
        }
        out.refresh_real_flag();
        Ok(out)
    }
}

// ---------------------------------------------------------------------------
// Transfer operator on series
// ---------------------------------------------------------------------------

/// Averaged twist of a function on `T^d` along flow lines:
/// `(T f)(theta) = \int_0^1 f(t, theta + t mu) e^{4 pi (lambda + i rho) t} dt`,
/// computed mode-by-mode. Modes with distinct first-axis indices but equal
/// base modes accumulate into the same output coefficient.
pub fn apply_t(lambda: f64, rho: f64, mu: &[f64], f: &TrigSeries) -> Result<TrigSeries> {
    if f.dim() != mu.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: mu.len() + 1,
            got: f.dim(),
            context: "transfer operator input dimension",
        });
    }
    let p0 = f.periods()[0] as f64;
    let base_periods = &f.periods()[1..];
    let mut out = TrigSeries::zero(base_periods)?;
    for (k, c) in f.coeffs() {
        let k1 = k[0] as f64 / p0;
        let y: f64 = k[1..]
            .iter()
            .zip(base_periods)
            .zip(mu)
            .map(|((kj, p), m)| (*kj as f64 / *p as f64) * m)
            .sum();
        let x = k1 + y + 2.0 * rho;
        let add = c * transfer_factor(lambda, x);
        let key = k[1..].to_vec();
        let cur = out.get(&key);
        out.insert(key, cur + add)?;
    }
    out.refresh_real_flag();
    Ok(out)
}

/// Site-supported preimage of a function on `T^{d-1}` under the averaged
/// twist: each base-mode coefficient is divided by the transfer multiplier
/// at its resonant site. Exact resonances (`lambda = 0` and offset within
/// [`RESONANT_TOL`] of zero) copy the coefficient verbatim, consistent with
/// the multiplier's limit 1. For `lambda = 0` the coefficient growth is at
/// most `pi/2`; for `lambda != 0` at most
/// `pi sqrt(16 lambda^2 + 1)/|e^{4 pi lambda} - 1|` (see
/// [`inverse_factor_bound`]). Real input with `rho = 0` has a real preimage.
pub fn invert_t(lambda: f64, rho: f64, mu: &[f64], phi: &TrigSeries) -> Result<ResonantSeries> {
    if phi.dim() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: phi.dim(),
            context: "transfer inverse input dimension",
        });
    }
    let mut coeffs = BTreeMap::new();
    for (k, c) in phi.coeffs() {
        if c.norm_sqr() == 0.0 {
            continue;
        }
        let ri = resonance_index(k, phi.periods(), mu, rho)?;
        let value = if lambda == 0.0 && ri.offset.abs() <= RESONANT_TOL {
            *c
        } else {
            *c / transfer_factor(lambda, ri.offset)
        };
        coeffs.insert(k.clone(), value);
    }
    Ok(ResonantSeries {
        mu: mu.to_vec(),
        rho,
        periods: phi.periods().to_vec(),
        coeffs,
    })
}

// ---------------------------------------------------------------------------
// Matrix-level inverses of the averaged conjugation
// ---------------------------------------------------------------------------

/// Bound for the averaged-conjugation inverse in the elliptic frame
/// (constant part `2 pi rho J`), mapping width-`h` input norms to
/// width-`h/(1+|mu|_1)` output norms on `T^d`:
/// `(pi/2) e^{2 pi h (2|rho| + 1) / (1 + |mu|_1)}`.
pub fn elliptic_constant(rho: f64, h: f64, mu: &[f64]) -> f64 {
    0.5 * PI * (TAU * h * (2.0 * rho.abs() + 1.0) / (1.0 + l1(mu))).exp()
}

/// Bound for the averaged-conjugation inverse in the hyperbolic frame
/// (constant part `2 pi lambda H`):
/// `pi sqrt(16 lambda^2 + 1) / (1 - e^{-4 pi |lambda|}) * e^{2 pi h/(1+|mu|_1)}`.
/// The denominator takes the worse of the two off-diagonal twist rates
/// `-lambda` and `+lambda`, which is what the contracting entry sees.
pub fn hyperbolic_constant(lambda: f64, h: f64, mu: &[f64]) -> f64 {
    let denom = -(-2.0 * TAU * lambda.abs()).exp_m1();
    PI * (16.0 * lambda * lambda + 1.0).sqrt() / denom * (TAU * h / (1.0 + l1(mu))).exp()
}

/// Result of inverting the averaged conjugation on a matrix series: the
/// preimage field on `T^d` together with the certificate data
/// `norm_output <= constant * norm_input` (output measured at width
/// `h/(1+|mu|_1)`, input at width `h`).
#[derive(Debug, Clone)]
pub struct OperatorInverse {
    pub f: MatSeries,
    pub constant: f64,
    pub norm_input: f64,
    pub norm_output: f64,
}

fn check_sl2r(g: &MatSeries) -> Result<()> {
    let tol = 1e-9 * (1.0 + g.norm_h(0.0));
    let tr = g.e[0][0].add(&g.e[1][1])?;
    if tr.norm_h(0.0) > tol {
        return Err(Error::NotTraceFree {
            trace: tr.norm_h(0.0),
            tol,
        });
    }
    for s in g.e.iter().flatten() {
        if !s.is_hermitian(tol) {
            return Err(Error::InvalidArgument(
                "matrix series must be real-valued (Hermitian coefficients)".into(),
            ));
        }
    }
    Ok(())
}

fn check_su11(g: &MatSeries) -> Result<()> {
    let tol = 1e-9 * (1.0 + g.norm_h(0.0));
    let tr = g.e[0][0].add(&g.e[1][1])?;
    if tr.norm_h(0.0) > tol {
        return Err(Error::NotTraceFree {
            trace: tr.norm_h(0.0),
            tol,
        });
    }
    let diag = g.e[0][0].scale(Complex64::new(0.0, -1.0));
    if !diag.is_hermitian(tol) {
        return Err(Error::InvalidArgument(
            "diagonal of a unit-disk-frame series must be imaginary-valued".into(),
        ));
    }
    let mirror = g.e[1][0].sub(&g.e[0][1].conj())?;
    if mirror.norm_h(0.0) > tol {
        return Err(Error::InvalidArgument(
            "off-diagonals of a unit-disk-frame series must be complex conjugates".into(),
        ));
    }
    Ok(())
}

/// Invert the averaged conjugation for an elliptic constant part, working in
/// the complexified frame where rotations are diagonal. The input `g` has
/// the symmetry `[[i g1, g2], [conj g2, -i g1]]` with `g1` real-valued; the
/// diagonal component is inverted with a plain average (`lambda = rho = 0`)
/// and the off-diagonal with twist rate `-rho`.
pub fn invert_l_elliptic(rho: f64, g: &MatSeries, mu: &[f64], h: f64) -> Result<OperatorInverse> {
    if g.dim() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: g.dim(),
            context: "averaged-conjugation inverse dimension",
        });
    }
    check_su11(g)?;
    let g1 = g.e[0][0].scale(Complex64::new(0.0, -1.0));
    let g2 = g.e[0][1].clone();
    let f1 = invert_t(0.0, 0.0, mu, &g1)?.to_trig()?;
    let f2 = invert_t(0.0, -rho, mu, &g2)?.to_trig()?;
    let e00 = f1.scale(Complex64::new(0.0, 1.0));
    let e11 = f1.scale(Complex64::new(0.0, -1.0));
    let e10 = f2.conj();
    let f = MatSeries::from_entries([[e00, f2], [e10, e11]], MatTag::Su11)?;
    let constant = elliptic_constant(rho, h, mu);
    Ok(OperatorInverse {
        norm_input: g.norm_h(h),
        norm_output: f.norm_h(h / (1.0 + l1(mu))),
        constant,
        f,
    })
}

/// Invert the averaged conjugation for a hyperbolic constant part
/// `2 pi lambda H`, `lambda != 0`. The diagonal sees a plain average; the
/// upper off-diagonal is twisted at rate `-lambda` and the lower at
/// `+lambda` (conjugation by `e^{-2 pi lambda H s}` scales entry `(1,2)` by
/// `e^{-4 pi lambda s}` and entry `(2,1)` by `e^{+4 pi lambda s}`).
pub fn invert_l_hyperbolic(
    lambda: f64,
    g: &MatSeries,
    mu: &[f64],
    h: f64,
) -> Result<OperatorInverse> {
    if lambda == 0.0 {
        return Err(Error::InvalidArgument(
            "hyperbolic averaged-conjugation inverse needs lambda != 0".into(),
        ));
    }
    if g.dim() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: g.dim(),
            context: "averaged-conjugation inverse dimension",
        });
    }
    check_sl2r(g)?;
    let f11 = invert_t(0.0, 0.0, mu, &g.e[0][0])?.to_trig()?;
    let f12 = invert_t(-lambda, 0.0, mu, &g.e[0][1])?.to_trig()?;
    let f21 = invert_t(lambda, 0.0, mu, &g.e[1][0])?.to_trig()?;
    let f = MatSeries::from_entries(
        [[f11.clone(), f12], [f21, f11.scale_real(-1.0)]],
        MatTag::Sl2R,
    )?;
    let constant = hyperbolic_constant(lambda, h, mu);
    Ok(OperatorInverse {
        norm_input: g.norm_h(h),
        norm_output: f.norm_h(h / (1.0 + l1(mu))),
        constant,
        f,
    })
}

/// Inverse of the flow-line average when the constant part vanishes: every
/// entry is inverted independently with `lambda = rho = 0`.
fn invert_l_flat(g: &MatSeries, mu: &[f64]) -> Result<MatSeries> {
    let f00 = invert_t(0.0, 0.0, mu, &g.e[0][0])?.to_trig()?;
    let f01 = invert_t(0.0, 0.0, mu, &g.e[0][1])?.to_trig()?;
    let f10 = invert_t(0.0, 0.0, mu, &g.e[1][0])?.to_trig()?;
    let f11 = invert_t(0.0, 0.0, mu, &g.e[1][1])?.to_trig()?;
    MatSeries::from_entries([[f00, f01], [f10, f11]], MatTag::Sl2R)
}

/// Forward averaged conjugation evaluated by quadrature,
/// `\int_0^1 e^{-A s} F(s, theta + s mu) e^{A s} ds`, for verifying the
/// explicit inverses against an independent computation.
pub fn average_conjugated_quadrature(
    a: &CMat2,
    f: &MatSeries,
    mu: &[f64],
    theta: &[f64],
    panels: usize,
) -> CMat2 {
    let value = |s: f64| -> CMat2 {
        let mut x = Vec::with_capacity(theta.len() + 1);
        x.push(s);
        for (t, m) in theta.iter().zip(mu) {
            x.push(t + s * m);
        }
        let em = a.scale(Complex64::new(-s, 0.0)).exp_tracefree();
        let ep = a.scale(Complex64::new(s, 0.0)).exp_tracefree();
        em.mul(&f.eval(&x)).mul(&ep)
    };
    let mut out = CMat2::ZERO;
    for i in 0..2 {
        for j in 0..2 {
            out.0[i][j] =
                crate::quadrature::integrate_complex(|s| value(s).0[i][j], 0.0, 1.0, panels);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Local embedding: configuration, report, Newton solver
// ---------------------------------------------------------------------------

fn default_schema() -> String {
    SCHEMA.to_string()
}

/// Input of the local embedding solve: match the time-one map of a flow
/// with constant part `a` and unknown field to the cocycle
/// `theta -> e^a e^{g(theta)}` over the rotation by `mu`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedConfig {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub a: Mat2,
    pub g: MatSeries,
    pub mu: Vec<f64>,
    pub h: f64,
    pub tol: f64,
}

/// Certificate data attached to an embedding run. All quantities are
/// measured in the frame where the averaged conjugation was inverted (the
/// normal frame of `a`, or the rescaled frame in the parabolic case):
/// `c` is the operator bound used for the smallness threshold, `norm_g` the
/// width-`h` input norm, and `norm_f` the width-`h/(1+|mu|_1)` output norm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificates {
    pub c: f64,
    pub norm_g: f64,
    pub norm_f: f64,
}

/// Outcome of [`embed_local`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedReport {
    pub schema: String,
    /// Conjugation class of the constant part of the input.
    pub class: Sl2Class,
    /// Constant part of the embedded flow. Equals the input constant except
    /// in the parabolic case, where the equation is solved in a rescaled
    /// frame and the constant part collapses to zero.
    pub a_tilde: Mat2,
    /// Solved quasi-periodic field on `T^d`.
    pub f: MatSeries,
    /// Present in the parabolic case: the constant frame `R` such that the
    /// solved flow's time-one map equals `R e^a e^{g} R^{-1}`.
    pub rescaling: Option<Mat2>,
    /// Number of Newton updates applied.
    pub iterations: usize,
    /// Sup-grid defect of the time-one map after each pass; index 0 is the
    /// defect of the zero field.
    pub residuals: Vec<f64>,
    pub certificates: Certificates,
    pub input: EmbedConfig,
}

/// Independent re-integration outcome for an embedding report.
#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    /// Sup over the probe grid of the time-one defect.
    pub defect: f64,
    /// Largest deviation of `det Phi^1` from 1 across the probes.
    pub det_defect: f64,
    /// Number of probe points.
    pub points: usize,
}

impl EmbedReport {
    fn omega(&self) -> Vec<f64> {
        let mut w = Vec::with_capacity(self.input.mu.len() + 1);
        w.push(1.0);
        w.extend_from_slice(&self.input.mu);
        w
    }

    /// Natural analyticity width of the solved field.
    pub fn field_width(&self) -> f64 {
        self.input.h / (1.0 + l1(&self.input.mu))
    }

    /// The embedded flow as an integrable system.
    pub fn system(&self) -> Result<QPSystem> {
        QPSystem::new(
            self.omega(),
            self.a_tilde,
            self.f.clone(),
            self.field_width(),
        )
    }

    /// The embedded flow conjugated back to the original frame (undoes the
    /// parabolic rescaling; identical to [`EmbedReport::system`] otherwise).
    pub fn pullback_system(&self) -> Result<QPSystem> {
        match &self.rescaling {
            None => self.system(),
            Some(r) => {
                let rinv = r.inverse_unimodular();
                let f = self.f.conjugate_const(&rinv)?;
                let a = rinv.mul(&self.a_tilde).mul(r);
                QPSystem::new(self.omega(), a, f, self.field_width())
            }
        }
    }

    /// Re-integrate the time-one map on a fresh offset grid (`n_per_axis`
    /// points per section axis) and measure the defect against the target
    /// cocycle, conjugated by the rescaling frame when one is present.
    pub fn verify(&self, n_per_axis: usize) -> Result<Verification> {
        if n_per_axis == 0 {
            return Err(Error::InvalidArgument("need at least one probe".into()));
        }
        let sys = self.system()?;
        let tol_int = (self.input.tol * 1e-2).clamp(1e-13, 1e-6);
        let r = self.rescaling.unwrap_or(Mat2::IDENTITY);
        let rinv = r.inverse_unimodular();
        let ea = exp_constant(&self.input.a);
        let pts = offset_grid(self.input.g.periods(), n_per_axis);
        let outcomes = pts
            .par_iter()
            .map(|th| -> Result<(f64, f64)> {
                let mut theta = Vec::with_capacity(th.len() + 1);
                theta.push(0.0);
                theta.extend_from_slice(th);
                let phi = sys.integrate(&theta, 1.0, tol_int)?;
                let target = r.mul(&ea).mul(&exp_of_series(&self.input.g, th)).mul(&rinv);
                Ok((
                    phi.sub(&target).norm_fro(),
                    (phi.det() - 1.0).abs(),
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let defect = outcomes.iter().map(|o| o.0).fold(0.0, f64::max);
        let det_defect = outcomes.iter().map(|o| o.1).fold(0.0, f64::max);
        Ok(Verification {
            defect,
            det_defect,
            points: pts.len(),
        })
    }
}

/// Cartesian product grid with an irrational offset, `p (i + c)/n` per axis.
fn offset_grid(periods: &[u8], n: usize) -> Vec<Vec<f64>> {
    let d = periods.len();
    let total = n.pow(d as u32);
    let mut pts = Vec::with_capacity(total);
    for flat in 0..total {
        let mut rem = flat;
        let mut x = vec![0.0; d];
        for j in (0..d).rev() {
            let i = rem % n;
            rem /= n;
            x[j] = periods[j] as f64 * (i as f64 + PROBE_OFFSET) / n as f64;
        }
        pts.push(x);
    }
    pts
}

/// Evaluate `e^{g(x)}` with the value re-centered to exact zero trace.
fn exp_of_series(g: &MatSeries, x: &[f64]) -> Mat2 {
    exp_constant(&g.eval_real(x))
}

/// Rebalance the diagonal of a real matrix series to exact zero trace.
fn tidy_sl2(m: MatSeries) -> Result<MatSeries> {
    let half = m.e[0][0].sub(&m.e[1][1])?.scale_real(0.5);
    MatSeries::from_entries(
        [
            [half.clone(), m.e[0][1].clone()],
            [m.e[1][0].clone(), half.scale_real(-1.0)],
        ],
        MatTag::Sl2R,
    )
}

fn retag(mut m: MatSeries, tag: MatTag) -> MatSeries {
    m.tag = tag;
    m
}

/// Project trace-free matrix samples on the collocation grid onto a series
/// with the given box, balancing the diagonal exactly.
fn project_sl2(
    samples: &[Mat2],
    periods: &[u8],
    box_: &[i32],
    grid: &[usize],
) -> Result<MatSeries> {
    let entry = |i: usize, j: usize| -> Result<TrigSeries> {
        let vals: Vec<Complex64> = samples
            .iter()
            .map(|m| Complex64::new(m.0[i][j], 0.0))
            .collect();
        TrigSeries::project_samples(&vals, periods, box_, grid)
    };
    let e00 = entry(0, 0)?;
    let e01 = entry(0, 1)?;
    let e10 = entry(1, 0)?;
    let e11 = entry(1, 1)?;
    let half = e00.sub(&e11)?.scale_real(0.5);
    MatSeries::from_entries(
        [[half.clone(), e01], [e10, half.scale_real(-1.0)]],
        MatTag::Sl2R,
    )
}

struct NewtonProblem<'a> {
    omega: Vec<f64>,
    a_flow: Mat2,
    base_periods: &'a [u8],
    box_: &'a [i32],
    grid: &'a [usize],
    pts: &'a [Vec<f64>],
    targets: &'a [Mat2],
    h_field: f64,
    tol: f64,
    max_iter: usize,
}

/// Quasi-Newton iteration for `Phi^1(0, .) = target(.)`: the correction
/// solves the averaged-conjugation equation against the multiplicative
/// defect logarithm `log(e^{-A} Phi^1 target^{-1} e^{A})`, which agrees with
/// the true linearization to first order. Grid integrations run
/// concurrently per point with a deterministic gather; the update itself is
/// sequential.
fn newton_solve(
    p: &NewtonProblem,
    linv: &dyn Fn(&MatSeries) -> Result<MatSeries>,
) -> Result<(MatSeries, Vec<f64>, usize)> {
    let tol_int = (p.tol * 1e-2).clamp(1e-13, 1e-6);
    let ea = exp_constant(&p.a_flow);
    let ea_inv = exp_constant(&p.a_flow.scale(-1.0));
    let tinv: Vec<Mat2> = p.targets.iter().map(Mat2::inverse_unimodular).collect();
    let mut full_periods = Vec::with_capacity(p.base_periods.len() + 1);
    full_periods.push(1u8);
    full_periods.extend_from_slice(p.base_periods);
    let mut f = MatSeries::zero(&full_periods, MatTag::Sl2R)?;
    let mut residuals: Vec<f64> = Vec::new();
    for pass in 0..=p.max_iter {
        let sys = QPSystem::new(p.omega.clone(), p.a_flow, f.clone(), p.h_field)?;
        let phis = p
            .pts
            .par_iter()
            .map(|th| {
                let mut theta = Vec::with_capacity(th.len() + 1);
                theta.push(0.0);
                theta.extend_from_slice(th);
                sys.integrate(&theta, 1.0, tol_int)
            })
            .collect::<Result<Vec<Mat2>>>()?;
        let r = phis
            .iter()
            .zip(p.targets)
            .map(|(a, b)| a.sub(b).norm_fro())
            .fold(0.0, f64::max);
        if !r.is_finite() {
            return Err(Error::Numerical("embedding residual is not finite".into()));
        }
        residuals.push(r);
        if r <= p.tol {
            return Ok((f, residuals, pass));
        }
        if pass == p.max_iter {
            return Err(Error::MaxIterations {
                max_iter: p.max_iter,
                residual: r,
                tol: p.tol,
            });
        }
        if residuals.len() >= 4 {
            let t = &residuals[residuals.len() - 4..];
            if t[1] >= t[0] && t[2] >= t[1] && t[3] >= t[2] {
                return Err(Error::Diverged {
                    iterations: pass,
                    tail: t.to_vec(),
                });
            }
        }
        let defects = phis
            .par_iter()
            .zip(&tinv)
            .map(|(phi, ti)| ea_inv.mul(phi).mul(ti).mul(&ea).log_unimodular())
            .collect::<Result<Vec<Mat2>>>()?;
        let rhs = project_sl2(&defects, p.base_periods, p.box_, p.grid)?;
        let delta = linv(&rhs)?;
        f = tidy_sl2(f.sub(&delta)?)?;
    }
    unreachable!("newton loop exits by return");
}

/// Maximum number of Newton updates before giving up.
const MAX_NEWTON_ITER: usize = 40;

/// Solve the local embedding problem: find a quasi-periodic field `F` on
/// `T^d` such that the flow with generator `a_tilde + F` and frequency
/// `(1, mu)` has time-one map `e^a e^{g(theta)}` over the section.
///
/// The constant part is first classified and conjugated to its normal form.
/// Elliptic and hyperbolic classes keep `a_tilde = a` and invert the
/// averaged conjugation in the corresponding frame; the parabolic class is
/// rescaled by `diag(eps^{1/4}, eps^{-1/4})` (with `eps` the perturbation
/// norm), which shrinks the nilpotent constant to size `sqrt(eps)` so the
/// whole cocycle embeds as a perturbation of the identity with
/// `a_tilde = 0`; the report's `rescaling` frame records the change of
/// coordinates, and the solved field norm scales like `sqrt(eps)`.
///
/// Requires the width-`h` norm of the conjugated perturbation to be below
/// `1/C^2` for the class constant `C` ([`elliptic_constant`],
/// [`hyperbolic_constant`]); fails with a threshold, divergence
/// (three consecutive non-decreasing residuals), or iteration-limit error
/// otherwise.
pub fn embed_local(a: &Mat2, g: &MatSeries, mu: &[f64], h: f64, tol: f64) -> Result<EmbedReport> {
    if mu.is_empty() || mu.iter().any(|m| !m.is_finite()) {
        return Err(Error::InvalidArgument(
            "mu must be finite and non-empty".into(),
        ));
    }
    if g.dim() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: g.dim(),
            context: "perturbation dimension vs mu",
        });
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidArgument("width h must be positive".into()));
    }
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::InvalidArgument("tolerance must be in (0, 1)".into()));
    }
    check_sl2r(g)?;
    let input = EmbedConfig {
        schema: SCHEMA.to_string(),
        a: *a,
        g: g.clone(),
        mu: mu.to_vec(),
        h,
        tol,
    };
    let cls = classify(a)?;
    let p = cls.conjugator;
    let g_nf = retag(g.conjugate_const(&p)?, MatTag::Sl2R);
    let norm_g = g_nf.norm_h(h);
    let h_field = h / (1.0 + l1(mu));
    let mut omega = Vec::with_capacity(mu.len() + 1);
    omega.push(1.0);
    omega.extend_from_slice(mu);

    // Collocation geometry: box twice the perturbation support plus slack
    // (quadratic corrections live on the doubled support), grid at least
    // four times the support and alias-free for the box.
    let gbox = g_nf.support_box();
    let box_: Vec<i32> = gbox.iter().map(|b| 2 * b + 2).collect();
    let grid: Vec<usize> = gbox
        .iter()
        .zip(&box_)
        .map(|(gb, b)| {
            (2 * (2 * *b as usize + 1))
                .max(4 * *gb as usize)
                .max(8)
        })
        .collect();
    let pts = grid_points(g_nf.periods(), &grid);

    if norm_g == 0.0 {
        // The zero field embeds a constant cocycle exactly; record one
        // verification pass over the grid.
        let zero_f = MatSeries::zero(
            &std::iter::once(1u8)
                .chain(g.periods().iter().copied())
                .collect::<Vec<u8>>(),
            MatTag::Sl2R,
        )?;
        let sys = QPSystem::new(omega.clone(), *a, zero_f.clone(), h_field)?;
        let tol_int = (tol * 1e-2).clamp(1e-13, 1e-6);
        let ea = exp_constant(a);
        let r0 = pts
            .par_iter()
            .map(|th| {
                let mut theta = Vec::with_capacity(th.len() + 1);
                theta.push(0.0);
                theta.extend_from_slice(th);
                sys.integrate(&theta, 1.0, tol_int)
                    .map(|phi| phi.sub(&ea).norm_fro())
            })
            .collect::<Result<Vec<f64>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        if r0 > tol {
            return Err(Error::Numerical(format!(
                "constant cocycle integrates with defect {r0:.3e} above tolerance {tol:.3e}"
            )));
        }
        return Ok(EmbedReport {
            schema: SCHEMA.to_string(),
            class: cls.class,
            a_tilde: *a,
            f: zero_f,
            rescaling: None,
            iterations: 0,
            residuals: vec![r0],
            certificates: Certificates {
                c: match cls.class {
                    Sl2Class::Elliptic { rho } => elliptic_constant(rho, h, mu),
                    Sl2Class::Hyperbolic { lambda } => hyperbolic_constant(lambda, h, mu),
                    _ => elliptic_constant(0.0, h, mu),
                },
                norm_g: 0.0,
                norm_f: 0.0,
            },
            input,
        });
    }

    let threshold = |c: f64, norm: f64, context: &'static str| -> Result<()> {
        let limit = 1.0 / (c * c);
        if norm < limit {
            Ok(())
        } else {
            Err(Error::ThresholdExceeded {
                eps: norm,
                limit,
                context,
            })
        }
    };

    let (a_flow, c_used, norm_cert, targets, linv, rescaling): (
        Mat2,
        f64,
        f64,
        Vec<Mat2>,
        Box<dyn Fn(&MatSeries) -> Result<MatSeries>>,
        Option<Mat2>,
    ) = match cls.class {
        Sl2Class::Zero => {
            let c = elliptic_constant(0.0, h, mu);
            threshold(c, norm_g, "perturbation norm vs averaging-inverse bound")?;
            let targets: Vec<Mat2> = pts.iter().map(|th| exp_of_series(&g_nf, th)).collect();
            let mu_o = mu.to_vec();
            let linv: Box<dyn Fn(&MatSeries) -> Result<MatSeries>> =
                Box::new(move |d| invert_l_flat(d, &mu_o));
            (Mat2::ZERO, c, norm_g, targets, linv, None)
        }
        Sl2Class::Elliptic { rho } => {
            let a_nf = algebra::j_matrix().scale(TAU * rho);
            let c = elliptic_constant(rho, h, mu);
            threshold(c, norm_g, "perturbation norm vs averaging-inverse bound")?;
            let ea_nf = exp_constant(&a_nf);
            let targets: Vec<Mat2> = pts
                .iter()
                .map(|th| ea_nf.mul(&exp_of_series(&g_nf, th)))
                .collect();
            let mu_o = mu.to_vec();
            let linv: Box<dyn Fn(&MatSeries) -> Result<MatSeries>> = Box::new(move |d| {
                let d_u = retag(d.conjugate_const_c(&algebra::frame_m())?, MatTag::Su11);
                let inv = invert_l_elliptic(rho, &d_u, &mu_o, h)?;
                let back = inv.f.conjugate_const_c(&algebra::frame_m_inv())?;
                tidy_sl2(retag(back, MatTag::Sl2R))
            });
            (a_nf, c, norm_g, targets, linv, None)
        }
        Sl2Class::Hyperbolic { lambda } => {
            let a_nf = algebra::h_matrix().scale(TAU * lambda);
            let c = hyperbolic_constant(lambda, h, mu);
            threshold(c, norm_g, "perturbation norm vs averaging-inverse bound")?;
            let ea_nf = exp_constant(&a_nf);
            let targets: Vec<Mat2> = pts
                .iter()
                .map(|th| ea_nf.mul(&exp_of_series(&g_nf, th)))
                .collect();
            let mu_o = mu.to_vec();
            let linv: Box<dyn Fn(&MatSeries) -> Result<MatSeries>> =
                Box::new(move |d| invert_l_hyperbolic(lambda, d, &mu_o, h).map(|o| o.f));
            (a_nf, c, norm_g, targets, linv, None)
        }
        Sl2Class::Parabolic { sign } => {
            let eps = norm_g;
            let b = Mat2::diag(eps.powf(0.25), eps.powf(-0.25));
            let g_b = retag(g_nf.conjugate_const(&b)?, MatTag::Sl2R);
            let a_pr = algebra::e12().scale(sign * eps.sqrt());
            let c = elliptic_constant(0.0, h, mu);
            let norm_eff = eps.sqrt() + g_b.norm_h(h);
            threshold(c, norm_eff, "rescaled parabolic perturbation norm")?;
            let ea_pr = exp_constant(&a_pr);
            let targets: Vec<Mat2> = pts
                .iter()
                .map(|th| ea_pr.mul(&exp_of_series(&g_b, th)))
                .collect();
            let mu_o = mu.to_vec();
            let linv: Box<dyn Fn(&MatSeries) -> Result<MatSeries>> =
                Box::new(move |d| invert_l_flat(d, &mu_o));
            (Mat2::ZERO, c, eps, targets, linv, Some(b.mul(&p)))
        }
    };

    let problem = NewtonProblem {
        omega,
        a_flow,
        base_periods: g_nf.periods(),
        box_: &box_,
        grid: &grid,
        pts: &pts,
        targets: &targets,
        h_field,
        tol,
        max_iter: MAX_NEWTON_ITER,
    };
    let (f_solved, residuals, iterations) = newton_solve(&problem, linv.as_ref())?;
    let norm_f = f_solved.norm_h(h_field);

    let (a_tilde, f_out) = if rescaling.is_some() {
        (Mat2::ZERO, f_solved)
    } else {
        let f_back = retag(
            f_solved.conjugate_const(&p.inverse_unimodular())?,
            MatTag::Sl2R,
        );
        (*a, f_back)
    };

    Ok(EmbedReport {
        schema: SCHEMA.to_string(),
        class: cls.class,
        a_tilde,
        f: f_out,
        rescaling,
        iterations,
        residuals,
        certificates: Certificates {
            c: c_used,
            norm_g: norm_cert,
            norm_f,
        },
        input,
    })
}

/// Embed a diagonal cocycle `theta -> diag(e^{phi(theta)}, e^{-phi(theta)})`
/// exactly: the field `diag(f, -f)` with `f` the site-supported preimage of
/// `phi` under the flow-line average produces a diagonal flow whose
/// time-one map integrates `f` along flow lines back to `phi`.
pub fn embed_uh_diagonal(phi: &TrigSeries, mu: &[f64]) -> Result<QPSystem> {
    if phi.dim() != mu.len() {
        return Err(Error::DimensionMismatch {
            expected: mu.len(),
            got: phi.dim(),
            context: "diagonal embedding dimension",
        });
    }
    let tol = 1e-12 * (1.0 + phi.max_abs_coeff());
    if !phi.is_hermitian(tol) {
        return Err(Error::InvalidArgument(
            "diagonal embedding needs a real-valued input".into(),
        ));
    }
    let f = invert_t(0.0, 0.0, mu, phi)?.to_trig()?;
    let zero = TrigSeries::zero(f.periods())?;
    let fm = MatSeries::from_entries(
        [[f.clone(), zero.clone()], [zero, f.scale_real(-1.0)]],
        MatTag::Sl2R,
    )?;
    let mut omega = Vec::with_capacity(mu.len() + 1);
    omega.push(1.0);
    omega.extend_from_slice(mu);
    QPSystem::new(omega, Mat2::ZERO, fm, 0.0)
}

// ---------------------------------------------------------------------------
// Conjugacy transport between flows and their sections
// ---------------------------------------------------------------------------

/// A flow on `T^d` obtained by conjugating another flow with a frame defined
/// over the section angles:
///
/// ```text
///     Phi^t(x) = B(x_s + t mu)^{-1} PhiTilde^t(x) B(x_s)
/// ```
///
/// where `x_s` are the section (angular) coordinates of `x`. The flow
/// property holds exactly for any frame `B`, the object inherits the frame's
/// periodicity, and the time-one map over the section is the conjugated
/// cocycle `B(theta + mu)^{-1} AtildeCocycle(theta) B(theta)`.
pub struct ExtendedFlow<'a> {
    conj: &'a MatSeries,
    flow: &'a QPSystem,
    tol: f64,
}

/// Build the conjugated flow sampler. The base flow's first frequency must
/// be 1 (unit speed along the section-transverse axis) and the frame must be
/// real with determinant 1 on its torus.
pub fn extend_conjugacy_to_flow<'a>(
    conj: &'a MatSeries,
    flow_tilde: &'a QPSystem,
    tol: f64,
) -> Result<ExtendedFlow<'a>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("need tol > 0".into()));
    }
    if (flow_tilde.mu[0] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "flow must move at unit speed along the first axis".into(),
        ));
    }
    if conj.dim() + 1 != flow_tilde.dim() {
        return Err(Error::DimensionMismatch {
            expected: flow_tilde.dim() - 1,
            got: conj.dim(),
            context: "conjugacy frame dimension",
        });
    }
    for th in offset_grid(conj.periods(), 4) {
        let v = conj.eval(&th);
        if v.max_imag() > 1e-9 {
            return Err(Error::InvalidArgument(
                "conjugacy frame must be real-valued".into(),
            ));
        }
        let dev = (v.real_part().det() - 1.0).abs();
        if dev > 1e-9 {
            return Err(Error::NotUnimodular { dev, at: th });
        }
    }
    Ok(ExtendedFlow {
        conj,
        flow: flow_tilde,
        tol,
    })
}

impl ExtendedFlow<'_> {
    /// Fundamental solution of the conjugated flow from `x` over time `t`.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<Mat2> {
        if x.len() != self.flow.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.flow.dim(),
                got: x.len(),
                context: "extended flow phase",
            });
        }
        let mu = &self.flow.mu[1..];
        let xs = &x[1..];
        let b0 = self.conj.eval_real(xs);
        let xt: Vec<f64> = xs.iter().zip(mu).map(|(v, m)| v + t * m).collect();
        let bt = self.conj.eval_real(&xt);
        let phi = self.flow.integrate(x, t, self.tol)?;
        Ok(bt.inverse_unimodular().mul(&phi).mul(&b0))
    }
}

/// A conjugacy between two flows on `T^d`, lifted from a conjugacy `B`
/// between their time-one section cocycles:
///
/// ```text
///     Bbar(x_1, x_s) = Phi^{x_1}(0, y) B(y) PhiBar^{x_1}(0, y)^{-1},
///     y = x_s - x_1 mu.
/// ```
///
/// It intertwines the flows exactly (`Bbar(x + t omega) PhiBar^t(x) =
/// Phi^t(x) Bbar(x)`) and is 2-periodic in `x_1` whenever `B` conjugates the
/// section cocycles, which is checked on probes at construction.
pub struct LiftedConjugacy<'a> {
    b: &'a MatSeries,
    flow: &'a QPSystem,
    flow_bar: &'a QPSystem,
    tol_int: f64,
}

/// Build the lifted conjugacy after verifying on probe points that `B`
/// conjugates the two time-one section cocycles within `tol`.
pub fn lift_conjugacy_to_flow<'a>(
    b: &'a MatSeries,
    flow: &'a QPSystem,
    flow_bar: &'a QPSystem,
    tol: f64,
) -> Result<LiftedConjugacy<'a>> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument("need tol > 0".into()));
    }
    if flow.dim() != flow_bar.dim()
        || flow
            .mu
            .iter()
            .zip(&flow_bar.mu)
            .any(|(a, c)| (a - c).abs() > 1e-12)
    {
        return Err(Error::InvalidArgument(
            "the two flows must share one frequency vector".into(),
        ));
    }
    if (flow.mu[0] - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "flows must move at unit speed along the first axis".into(),
        ));
    }
    if b.dim() + 1 != flow.dim() {
        return Err(Error::DimensionMismatch {
            expected: flow.dim() - 1,
            got: b.dim(),
            context: "section conjugacy dimension",
        });
    }
    let tol_int = (tol * 1e-2).clamp(1e-13, 1e-6);
    let mu = &flow.mu[1..];
    let mut residual = 0.0f64;
    for th in offset_grid(b.periods(), 4) {
        let mut theta = Vec::with_capacity(th.len() + 1);
        theta.push(0.0);
        theta.extend_from_slice(&th);
        let phi = flow.integrate(&theta, 1.0, tol_int)?;
        let phib = flow_bar.integrate(&theta, 1.0, tol_int)?;
        let shifted: Vec<f64> = th.iter().zip(mu).map(|(v, m)| v + m).collect();
        let lhs = phi.mul(&b.eval_real(&th));
        let rhs = b.eval_real(&shifted).mul(&phib);
        residual = residual.max(lhs.sub(&rhs).norm_fro());
    }
    if residual > tol {
        return Err(Error::ConjugacyMismatch { residual, tol });
    }
    Ok(LiftedConjugacy {
        b,
        flow,
        flow_bar,
        tol_int,
    })
}

impl LiftedConjugacy<'_> {
    /// Evaluate the lifted conjugacy at a point of `T^d`.
    pub fn eval(&self, x: &[f64]) -> Result<Mat2> {
        if x.len() != self.flow.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.flow.dim(),
                got: x.len(),
                context: "lifted conjugacy phase",
            });
        }
        let x1 = x[0];
        let mu = &self.flow.mu[1..];
        let y: Vec<f64> = x[1..].iter().zip(mu).map(|(v, m)| v - x1 * m).collect();
        let mut theta = Vec::with_capacity(x.len());
        theta.push(0.0);
        theta.extend_from_slice(&y);
        let phi = self.flow.integrate(&theta, x1, self.tol_int)?;
        let phib = self.flow_bar.integrate(&theta, x1, self.tol_int)?;
        Ok(phi
            .mul(&self.b.eval_real(&y))
            .mul(&phib.inverse_unimodular()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{e12, frame_m, frame_m_inv, h_matrix, j_matrix};
    use crate::quadrature::integrate_complex;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const GOLDEN: f64 = 0.618_033_988_749_894_9;

    fn c64(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Random real series on the circle with modes `1..=n`.
    fn random_real_series(rng: &mut ChaCha8Rng, n: i32) -> TrigSeries {
        let mut s = TrigSeries::zero(&[1]).unwrap();
        for k in 1..=n {
            let c = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            s.insert(vec![k], c).unwrap();
            s.insert(vec![-k], c.conj()).unwrap();
        }
        s.refresh_real_flag();
        s
    }

    /// Random complex series on the circle with modes `-n..=n`.
    fn random_complex_series(rng: &mut ChaCha8Rng, n: i32) -> TrigSeries {
        let mut s = TrigSeries::zero(&[1]).unwrap();
        for k in -n..=n {
            let c = c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            s.insert(vec![k], c).unwrap();
        }
        s
    }

    /// Random real trace-free matrix series on the circle.
    fn random_sl2r(rng: &mut ChaCha8Rng, n: i32, amp: f64) -> MatSeries {
        let e00 = random_real_series(rng, n).scale_real(amp);
        let e01 = random_real_series(rng, n).scale_real(amp);
        let e10 = random_real_series(rng, n).scale_real(amp);
        MatSeries::from_entries(
            [[e00.clone(), e01], [e10, e00.scale_real(-1.0)]],
            MatTag::Sl2R,
        )
        .unwrap()
    }

    #[test]
    fn transfer_factor_matches_quadrature() {
        for &lambda in &[0.0, 0.31, -0.27, 1e-5] {
            for &x in &[0.0, 1e-9, 0.05, -0.32, 0.5, -0.5] {
                let direct = transfer_factor(lambda, x);
                let quad = integrate_complex(
                    |t| (c64(2.0 * TAU * lambda, TAU * x) * t).exp(),
                    0.0,
                    1.0,
                    400,
                );
                assert!(
                    (direct - quad).norm() < 1e-12,
                    "lambda {lambda}, x {x}: {direct} vs {quad}"
                );
            }
        }
    }

    #[test]
    fn apply_t_matches_quadrature_on_a_random_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mu = [GOLDEN];
        let (lambda, rho) = (0.07, 0.11);
        // Random function on T^2 with modes in a 2x3 box.
        let mut f = TrigSeries::zero(&[1, 1]).unwrap();
        for k1 in -2..=2i32 {
            for k2 in -3..=3i32 {
                f.insert(
                    vec![k1, k2],
                    c64(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
                )
                .unwrap();
            }
        }
        let out = apply_t(lambda, rho, &mu, &f).unwrap();
        for &theta in &[0.0, 0.137, 0.52, 0.881] {
            let direct = out.eval(&[theta]);
            let quad = integrate_complex(
                |t| {
                    f.eval(&[t, theta + t * mu[0]])
                        * (c64(2.0 * TAU * lambda, 2.0 * TAU * rho) * t).exp()
                },
                0.0,
                1.0,
                2500,
            );
            assert!(
                (direct - quad).norm() < 1e-10,
                "theta {theta}: {direct} vs {quad}"
            );
        }
    }

    #[test]
    fn apply_invert_round_trip_is_identity_across_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let mu = [GOLDEN];
        for &lambda in &[0.0, 0.31, -0.27] {
            for &rho in &[0.0, 0.13, 0.45] {
                let phi = random_complex_series(&mut rng, 6);
                let f = invert_t(lambda, rho, &mu, &phi).unwrap();
                let back = apply_t(lambda, rho, &mu, &f.to_trig().unwrap()).unwrap();
                let diff = back.sub(&phi).unwrap().norm_h(0.0);
                let scale = phi.norm_h(0.0);
                assert!(
                    diff <= 1e-13 * scale,
                    "lambda {lambda}, rho {rho}: relative defect {}",
                    diff / scale
                );
            }
        }
    }

    #[test]
    fn exact_resonance_copies_coefficients_verbatim() {
        // With mu = 1/2 and rho = 1/4 the mode k = 1 satisfies
        // <k, mu> + 2 rho = 1 exactly: the site is -1 and the offset 0.
        let mu = [0.5];
        let rho = 0.25;
        let mut phi = TrigSeries::zero(&[1]).unwrap();
        let c = c64(0.7, -0.2);
        phi.insert(vec![1], c).unwrap();
        let f = invert_t(0.0, rho, &mu, &phi).unwrap();
        let ri = f.index(&[1]).unwrap();
        assert_eq!(ri.site, -1);
        assert_eq!(ri.offset, 0.0);
        assert_eq!(f.coeffs()[&vec![1]], c);
        let back = apply_t(0.0, rho, &mu, &f.to_trig().unwrap()).unwrap();
        assert!((back.get(&[1]) - c).norm() < 1e-15);
    }

    #[test]
    fn real_input_with_zero_twist_has_real_preimage() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let phi = random_real_series(&mut rng, 5);
        for &lambda in &[0.0, 0.22] {
            let f = invert_t(lambda, 0.0, &[GOLDEN], &phi).unwrap();
            let t = f.to_trig().unwrap();
            assert!(t.is_real(), "lambda {lambda}: preimage should be real");
        }
    }

    proptest! {
        #[test]
        fn resonance_offsets_stay_in_the_half_band(
            k in -40i32..40,
            mu in -2.0f64..2.0,
            rho in -0.5f64..0.5,
        ) {
            let ri = resonance_index(&[k], &[1], &[mu], rho).unwrap();
            prop_assert!(ri.offset.abs() <= 0.5 + 1e-12);
            // The site reproduces the offset algebraically.
            let y = k as f64 * mu + 2.0 * rho;
            prop_assert!((ri.site as f64 + y - ri.offset).abs() < 1e-9);
        }

        #[test]
        fn inverse_factor_bound_holds(
            lambda in -0.6f64..0.6,
            x in -0.5f64..0.5,
        ) {
            let f = transfer_factor(lambda, x);
            prop_assert!(1.0 / f.norm() <= inverse_factor_bound(lambda) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn zero_rate_inverse_factor_peaks_only_at_the_band_edge() {
        // |1/psi(2 pi i x)| = pi x / sin(pi x) is strictly below pi/2 away
        // from |x| = 1/2 and equals it there.
        let edge = 1.0 / transfer_factor(0.0, 0.5).norm();
        assert!((edge - 0.5 * PI).abs() < 1e-12);
        for &x in &[0.0, 0.1, 0.3, 0.49] {
            assert!(1.0 / transfer_factor(0.0, x).norm() < 0.5 * PI - 1e-4);
        }
    }

    #[test]
    fn weighted_norm_matches_single_mode_example() {
        let mu = [GOLDEN];
        let h = 0.37;
        let f = ResonantSeries::from_coeffs(&mu, 0.1, &[1], [(vec![1], c64(1.0, 0.0))]).unwrap();
        let want = (TAU * (1.0 + GOLDEN) * h).exp();
        assert!((f.weighted_norm(h) - want).abs() < 1e-12 * want);
    }

    #[test]
    fn site_supported_norm_sandwich() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mu = [GOLDEN];
        let (rho, h) = (0.3, 0.3);
        let phi = random_complex_series(&mut rng, 7);
        let f = invert_t(0.0, rho, &mu, &phi).unwrap();
        let w = f.weighted_norm(h);
        let t = f.to_trig().unwrap().norm_h(h);
        let upper = (TAU * h * (2.0 * rho + 1.0)).exp() * w;
        let lower = (-TAU * h * (2.0 - 2.0 * rho)).exp() * w;
        assert!(t <= upper * (1.0 + 1e-12), "upper: {t} vs {upper}");
        assert!(t >= lower * (1.0 - 1e-12), "lower: {t} vs {lower}");
    }

    #[test]
    fn invert_l_elliptic_matches_quadrature_forward_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let mu = [GOLDEN];
        let (rho, h) = (0.2, 0.4);
        let a = j_matrix().scale(TAU * rho);
        let g_real = random_sl2r(&mut rng, 4, 0.3);
        let g_u = {
            let mut m = g_real.conjugate_const_c(&frame_m()).unwrap();
            m.tag = MatTag::Su11;
            m
        };
        let inv = invert_l_elliptic(rho, &g_u, &mu, h).unwrap();
        assert!(
            inv.norm_output <= inv.constant * inv.norm_input * (1.0 + 1e-12),
            "certificate: {} vs {}",
            inv.norm_output,
            inv.constant * inv.norm_input
        );
        let f_real = inv.f.conjugate_const_c(&frame_m_inv()).unwrap();
        for &theta in &[0.0, 0.3, 0.77] {
            let avg = average_conjugated_quadrature(&a.to_complex(), &f_real, &mu, &[theta], 2500);
            let want = g_real.eval(&[theta]);
            assert!(
                avg.sub(&want).norm_fro() < 1e-10,
                "theta {theta}: defect {}",
                avg.sub(&want).norm_fro()
            );
        }
    }

    #[test]
    fn invert_l_hyperbolic_matches_quadrature_forward_operator() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mu = [GOLDEN];
        let (lambda, h) = (0.23, 0.4);
        let a = h_matrix().scale(TAU * lambda);
        let g = random_sl2r(&mut rng, 4, 0.3);
        let inv = invert_l_hyperbolic(lambda, &g, &mu, h).unwrap();
        assert!(inv.norm_output <= inv.constant * inv.norm_input * (1.0 + 1e-12));
        for &theta in &[0.08, 0.41, 0.9] {
            let avg = average_conjugated_quadrature(&a.to_complex(), &inv.f, &mu, &[theta], 2500);
            let want = g.eval(&[theta]);
            assert!(
                avg.sub(&want).norm_fro() < 1e-10,
                "theta {theta}: defect {}",
                avg.sub(&want).norm_fro()
            );
        }
        assert!(matches!(
            invert_l_hyperbolic(0.0, &g, &mu, h),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn invert_l_preserves_constants() {
        // A constant diagonal input is a fixed point: the averaged
        // conjugation acts trivially on the zero mode of the diagonal.
        let mu = [GOLDEN];
        let g1 = TrigSeries::constant(&[1], c64(0.4, 0.0)).unwrap();
        let zero = TrigSeries::zero(&[1]).unwrap();
        let g = MatSeries::from_entries(
            [
                [g1.scale(c64(0.0, 1.0)), zero.clone()],
                [zero, g1.scale(c64(0.0, -1.0))],
            ],
            MatTag::Su11,
        )
        .unwrap();
        let inv = invert_l_elliptic(0.17, &g, &mu, 0.3).unwrap();
        let probe = [0.123];
        let got = inv.f.eval(&[0.5, probe[0]]);
        let want = g.eval(&probe);
        assert!(got.sub(&want).norm_fro() < 1e-14);
    }

    /// Small deterministic perturbation used by the solver tests.
    fn test_perturbation(seed: u64, modes: i32, h: f64, amp: f64) -> MatSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let raw = random_sl2r(&mut rng, modes, 1.0);
        let norm = raw.norm_h(h);
        raw.scale_real(amp / norm)
    }

    #[test]
    fn embed_zero_perturbation_embeds_exactly() {
        let a = j_matrix().scale(TAU * 0.15);
        let g = MatSeries::zero(&[1], MatTag::Sl2R).unwrap();
        let rep = embed_local(&a, &g, &[GOLDEN], 0.5, 1e-8).unwrap();
        assert_eq!(rep.iterations, 0);
        assert_eq!(rep.residuals.len(), 1);
        assert!(rep.residuals[0] <= 1e-8);
        assert_eq!(rep.f.norm_h(0.0), 0.0);
        assert_eq!(rep.a_tilde, a);
        assert!(rep.rescaling.is_none());
    }

    #[test]
    fn embed_elliptic_converges_certifies_and_verifies() {
        let rho = 0.15;
        let a = j_matrix().scale(TAU * rho);
        let mu = [GOLDEN];
        let h = 0.5;
        let g = test_perturbation(101, 3, h, 1e-3);
        let rep = embed_local(&a, &g, &mu, h, 1e-8).unwrap();
        assert!(rep.iterations <= 15, "iterations {}", rep.iterations);
        assert_eq!(rep.a_tilde, a);
        let ver = rep.verify(48).unwrap();
        assert!(ver.defect <= 1e-8, "verified defect {}", ver.defect);
        assert!(ver.det_defect <= 1e-12, "det defect {}", ver.det_defect);
        let c = elliptic_constant(rho, h, &mu);
        assert!(
            rep.certificates.norm_f <= 1.1 * c * rep.certificates.norm_g,
            "norm_f {} vs bound {}",
            rep.certificates.norm_f,
            1.1 * c * rep.certificates.norm_g
        );
    }

    #[test]
    fn embed_hyperbolic_converges_and_verifies() {
        let lambda = 0.1;
        let a = h_matrix().scale(TAU * lambda);
        let mu = [GOLDEN];
        let h = 0.5;
        // The averaging bound at this width admits norms below ~9.2e-4.
        let g = test_perturbation(103, 3, h, 5e-4);
        let rep = embed_local(&a, &g, &mu, h, 1e-8).unwrap();
        assert_eq!(rep.a_tilde, a);
        let ver = rep.verify(48).unwrap();
        assert!(ver.defect <= 1e-8, "verified defect {}", ver.defect);
    }

    #[test]
    fn embed_parabolic_rescales_and_scales_like_sqrt_eps() {
        let a = e12();
        let mu = [GOLDEN];
        // The rescaled problem has effective size sqrt(eps), so the width must
        // be small enough that the flat averaging bound admits it.
        let h = 0.1;
        let mut norms = Vec::new();
        for &eps in &[1e-4, 1e-6] {
            let g = test_perturbation(107, 3, h, eps);
            let rep = embed_local(&a, &g, &mu, h, 1e-9).unwrap();
            assert_eq!(rep.a_tilde, Mat2::ZERO);
            assert!(rep.rescaling.is_some());
            let ver = rep.verify(32).unwrap();
            assert!(ver.defect <= 1e-9, "verified defect {}", ver.defect);
            norms.push(rep.certificates.norm_f);
        }
        let ratio = norms[0] / norms[1];
        assert!(
            (5.0..=20.0).contains(&ratio),
            "field norms should scale like sqrt(eps): ratio {ratio}"
        );
    }

    #[test]
    fn embed_threshold_rejects_large_perturbation() {
        let a = j_matrix().scale(TAU * 0.15);
        let g = test_perturbation(109, 3, 0.5, 0.5);
        match embed_local(&a, &g, &[GOLDEN], 0.5, 1e-8) {
            Err(Error::ThresholdExceeded { eps, limit, .. }) => {
                assert!(eps >= limit);
            }
            other => panic!("expected a threshold error, got {other:?}"),
        }
    }

    #[test]
    fn embed_uh_diagonal_poincare_matches_exponential_oracle() {
        let mu = [GOLDEN];
        let mut phi = TrigSeries::zero(&[1]).unwrap();
        phi.insert(vec![0], c64(0.1, 0.0)).unwrap();
        phi.insert(vec![1], c64(0.15, 0.0)).unwrap();
        phi.insert(vec![-1], c64(0.15, 0.0)).unwrap();
        phi.refresh_real_flag();
        let sys = embed_uh_diagonal(&phi, &mu).unwrap();
        for &theta in &[0.0, 0.21, 0.68] {
            let m = sys.integrate(&[0.0, theta], 1.0, 1e-12).unwrap();
            let v = phi.eval_real(&[theta]);
            let want = Mat2::diag(v.exp(), (-v).exp());
            assert!(
                m.sub(&want).norm_fro() < 1e-10,
                "theta {theta}: defect {}",
                m.sub(&want).norm_fro()
            );
        }
    }

    /// Degree-one rotation frame `theta -> R(theta)` as a matrix series.
    fn rotation_frame() -> MatSeries {
        let mut c = TrigSeries::zero(&[1]).unwrap();
        c.insert(vec![1], c64(0.5, 0.0)).unwrap();
        c.insert(vec![-1], c64(0.5, 0.0)).unwrap();
        c.refresh_real_flag();
        let mut s = TrigSeries::zero(&[1]).unwrap();
        s.insert(vec![1], c64(0.0, -0.5)).unwrap();
        s.insert(vec![-1], c64(0.0, 0.5)).unwrap();
        s.refresh_real_flag();
        MatSeries::from_entries(
            [[c.clone(), s.scale_real(-1.0)], [s, c]],
            MatTag::Sl2RValued,
        )
        .unwrap()
    }

    #[test]
    fn extended_flow_satisfies_flow_property_and_section_identity() {
        let mu = [GOLDEN];
        let mut phi = TrigSeries::zero(&[1]).unwrap();
        phi.insert(vec![1], c64(0.2, 0.0)).unwrap();
        phi.insert(vec![-1], c64(0.2, 0.0)).unwrap();
        phi.refresh_real_flag();
        let flow = embed_uh_diagonal(&phi, &mu).unwrap();
        let b = rotation_frame();
        let tol = 1e-11;
        let ext = extend_conjugacy_to_flow(&b, &flow, tol).unwrap();

        // Flow property on random-ish probes.
        for &(t, s, x1, x2) in &[
            (0.7, 0.4, 0.0, 0.31),
            (-0.6, 1.3, 0.25, 0.83),
            (2.1, -0.9, 0.6, 0.12),
        ] {
            let x = [x1, x2];
            let xs = [x1 + s, x2 + s * mu[0]];
            let lhs = ext.eval(t + s, &x).unwrap();
            let rhs = ext.eval(t, &xs).unwrap().mul(&ext.eval(s, &x).unwrap());
            assert!(
                lhs.sub(&rhs).norm_fro() <= 10.0 * tol,
                "flow property defect {}",
                lhs.sub(&rhs).norm_fro()
            );
        }

        // Periodicity in the first coordinate.
        let p1 = ext.eval(0.9, &[0.3, 0.44]).unwrap();
        let p2 = ext.eval(0.9, &[1.3, 0.44]).unwrap();
        assert!(p1.sub(&p2).norm_fro() <= 10.0 * tol);

        // Time-one section map is the conjugated cocycle.
        for &theta in &[0.1, 0.66] {
            let got = ext.eval(1.0, &[0.0, theta]).unwrap();
            let a_tilde = flow.integrate(&[0.0, theta], 1.0, tol).unwrap();
            let wrap = |x: f64| b.eval_real(&[x]);
            let want = wrap(theta + mu[0])
                .inverse_unimodular()
                .mul(&a_tilde)
                .mul(&wrap(theta));
            assert!(got.sub(&want).norm_fro() <= 10.0 * tol);
        }

        // The identity frame reproduces the base flow.
        let id = MatSeries::from_constant(&[1], &Mat2::IDENTITY, MatTag::Sl2RValued).unwrap();
        let ext_id = extend_conjugacy_to_flow(&id, &flow, tol).unwrap();
        let direct = flow.integrate(&[0.2, 0.9], 1.7, tol).unwrap();
        let viaid = ext_id.eval(1.7, &[0.2, 0.9]).unwrap();
        assert!(direct.sub(&viaid).norm_fro() <= 10.0 * tol);
    }

    #[test]
    fn lifted_conjugacy_constant_frame_and_mismatch_guard() {
        let mu = [GOLDEN];
        let mut phi = TrigSeries::zero(&[1]).unwrap();
        phi.insert(vec![1], c64(0.2, 0.0)).unwrap();
        phi.insert(vec![-1], c64(0.2, 0.0)).unwrap();
        phi.refresh_real_flag();
        let flow = embed_uh_diagonal(&phi, &mu).unwrap();
        // Conjugate the generator by a constant frame: the flows are then
        // conjugate by that same constant at every point.
        let q = Mat2::new(1.2, 0.1, 0.05, 0.8375); // det 1.0 + 0.1*0.05 adjusted below
        let q = q.scale(1.0 / q.det().sqrt());
        let f_bar = flow.f.conjugate_const(&q.inverse_unimodular()).unwrap();
        let flow_bar = QPSystem::new(flow.mu.clone(), Mat2::ZERO, f_bar, flow.h).unwrap();
        let b = MatSeries::from_constant(&[1], &q, MatTag::Sl2RValued).unwrap();
        let tol = 1e-9;
        let lift = lift_conjugacy_to_flow(&b, &flow, &flow_bar, tol).unwrap();

        for x in [[0.0, 0.3], [0.7, 0.1], [1.6, 0.85]] {
            let got = lift.eval(&x).unwrap();
            assert!(
                got.sub(&q).norm_fro() <= 10.0 * tol,
                "lift of a constant conjugacy stays constant"
            );
        }
        // Intertwining on a probe.
        let x = [0.4, 0.27];
        let t = 0.9;
        let xt = [x[0] + t, x[1] + t * mu[0]];
        let lhs = lift
            .eval(&xt)
            .unwrap()
            .mul(&flow_bar.integrate(&x, t, 1e-12).unwrap());
        let rhs = flow.integrate(&x, t, 1e-12).unwrap().mul(&lift.eval(&x).unwrap());
        assert!(lhs.sub(&rhs).norm_fro() <= 10.0 * tol);
        // 2-periodicity in the first coordinate.
        let p1 = lift.eval(&[0.23, 0.51]).unwrap();
        let p2 = lift.eval(&[2.23, 0.51]).unwrap();
        assert!(p1.sub(&p2).norm_fro() <= 10.0 * tol);

        // A frame that fails to conjugate the sections is rejected.
        let id = MatSeries::from_constant(&[1], &Mat2::IDENTITY, MatTag::Sl2RValued).unwrap();
        assert!(matches!(
            lift_conjugacy_to_flow(&id, &flow, &flow_bar, tol),
            Err(Error::ConjugacyMismatch { .. })
        ));
    }
}
