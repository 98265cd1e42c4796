//! Quasi-periodic SL(2,R) cocycles over torus translations: iteration,
//! fibered rotation numbers, Lyapunov exponents, conjugation, homotopy
//! degree, uniform-hyperbolicity certificates, and Schrodinger families.
//!
//! A cocycle is a pair `(mu, A)` of a translation vector on a torus and a
//! map `A` from that torus into SL(2,R); the dynamics iterates
//! `(theta, v) -> (theta + mu, A(theta) v)`. Rotation numbers are measured
//! in turns, counterclockwise positive, and reported modulo 1 in `[0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arithmetic::convergent_denominators;
use crate::error::Error;
use crate::fourier::{grid_points, MatSeries, MatTag, TrigSeries};
use crate::mat2::Mat2;
use crate::{Result, SCHEMA};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

fn default_schema() -> String {
    SCHEMA.to_string()
}

/// The fiber map of a cocycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Fiber {
    /// An SL(2,R)-valued map given entrywise as Fourier series.
    Series { m: MatSeries },
    /// `theta -> exp(a) * exp(g(theta))` with `a` and every `g(theta)`
    /// trace-free; always unimodular and homotopic to a constant.
    ExpPair { a: Mat2, g: MatSeries },
}

/// An analytic quasi-periodic SL(2,R) cocycle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cocycle {
    #[serde(default = "default_schema")]
    pub schema: String,
    /// Base translation, one frequency per torus axis.
    pub mu: Vec<f64>,
    pub fiber: Fiber,
    /// Winding of the fiber map around SL(2,R), one integer per axis.
    pub homotopy_degree: Vec<i64>,
}

/// Precompiled fiber evaluator (hoists constant work out of orbit loops).
pub struct FiberEval<'a> {
    kind: EvalKind<'a>,
}

enum EvalKind<'a> {
    Constant(Mat2),
    Series(&'a MatSeries),
    ExpPair { ea: Mat2, g: &'a MatSeries },
}

impl FiberEval<'_> {
    pub fn at(&self, theta: &[f64]) -> Mat2 {
        match &self.kind {
            EvalKind::Constant(m) => *m,
            EvalKind::Series(m) => m.eval_real(theta),
            EvalKind::ExpPair { ea, g } => ea.mul(&g.eval_real(theta).exp_tracefree()),
        }
    }
}

/// Fibered rotation number estimate.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CocycleRotation {
    /// Headline value in `[0, 1)`.
    pub value: f64,
    /// Estimate read at the full iteration count.
    pub plain: f64,
    /// Estimate read at the last convergent-denominator count of the base
    /// frequency (one-dimensional base only): the times where the base orbit
    /// nearly closes and Birkhoff averages converge fastest.
    pub accelerated: Option<f64>,
    /// Spread (circular distance) between the available estimates.
    pub error: f64,
    pub n: u64,
}

/// Lyapunov exponent estimate, averaged over random base points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct CocycleLyapunov {
    /// Mean of `ln ||A_n(theta)|| / n` over the sample points.
    pub value: f64,
    /// Half the max-min spread across the sample points.
    pub spread: f64,
    pub n: u64,
    pub samples: usize,
}

/// Outcome of the (non-rigorous) uniform-hyperbolicity certificate.
#[derive(Debug, Clone, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum UhCertificate {
    /// Singular-value gap of the n-step product clears `(1+margin)^2` on the
    /// whole grid and the expanding direction varies slowly between
    /// neighboring grid points.
    CertifiedUh {
        n: u64,
        min_gap: f64,
        max_direction_jump: f64,
    },
    /// The gap drops below `1+margin` somewhere: no exponential dichotomy at
    /// this depth.
    CertifiedNotUh { n: u64, witness: Vec<f64>, gap: f64 },
    /// Neither threshold met; deepen `n`, refine the grid, or move `margin`.
    Inconclusive {
        n: u64,
        min_gap: f64,
        max_direction_jump: f64,
        reason: String,
    },
}

/// One row of an energy scan of a Schrodinger cocycle family.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanRow {
    pub e: f64,
    /// Fibered rotation number in `[0, 1)`.
    pub rot: f64,
    /// Lyapunov exponent (natural-log units per step).
    pub lyap: f64,
    pub rot_err: f64,
    /// False where the rotation number decreases in `e` by more than the
    /// combined error bands (it must be nondecreasing, as pinned by the
    /// zero-potential closed form `arccos(-E/2)/2pi`).
    pub monotone_ok: bool,
}

fn advance(theta: &mut [f64], mu: &[f64], periods: &[u8]) {
    for j in 0..theta.len() {
        theta[j] = (theta[j] + mu[j]).rem_euclid(periods[j] as f64);
    }
}

fn frac(x: f64) -> f64 {
    x.rem_euclid(1.0)
}

/// Circular distance modulo 1.
fn circ_dist(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Probe points for validation: about 64 points, offset off the lattice.
fn probe_points(periods: &[u8]) -> Vec<Vec<f64>> {
    let d = periods.len();
    let m = match d {
        1 => 64usize,
        2 => 8,
        _ => 4,
    };
    grid_points(periods, &vec![m; d])
        .into_iter()
        .map(|mut x| {
            for (xj, p) in x.iter_mut().zip(periods) {
                *xj = (*xj + 0.2183 * *p as f64 / m as f64).rem_euclid(*p as f64);
            }
            x
        })
        .collect()
}

fn check_real_entries(m: &MatSeries, what: &str) -> Result<()> {
    for row in &m.e {
        for s in row {
            let scale = s.max_abs_coeff().max(1e-300);
            if !s.is_hermitian(1e-12 * scale) {
                return Err(Error::InvalidArgument(format!(
                    "{what} must be real-valued (coefficients are not Hermitian)"
                )));
            }
        }
    }
    Ok(())
}

impl Cocycle {
    pub fn new(mu: Vec<f64>, fiber: Fiber, homotopy_degree: Vec<i64>) -> Result<Cocycle> {
        let c = Cocycle {
            schema: default_schema(),
            mu,
            fiber,
            homotopy_degree,
        };
        c.validate()?;
        Ok(c)
    }

    /// Dimension of the base torus.
    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Per-axis periods of the base torus.
    pub fn periods(&self) -> &[u8] {
        match &self.fiber {
            Fiber::Series { m } => m.periods(),
            Fiber::ExpPair { g, .. } => g.periods(),
        }
    }

    /// Check schema, dimensions, realness, unimodularity on a probe grid,
    /// and the declared homotopy degree.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA {
            return Err(Error::InvalidArgument(format!(
                "unknown schema {:?}, expected {:?}",
                self.schema, SCHEMA
            )));
        }
        let d = self.mu.len();
        if d == 0 {
            return Err(Error::InvalidArgument(
                "cocycle needs at least one base frequency".into(),
            ));
        }
        if self.mu.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("base frequencies must be finite".into()));
        }
        if self.homotopy_degree.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.homotopy_degree.len(),
                context: "homotopy degree vector",
            });
        }
        match &self.fiber {
            Fiber::Series { m } => {
                if m.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: m.dim(),
                        context: "fiber series torus",
                    });
                }
                check_real_entries(m, "the fiber")?;
                for at in probe_points(m.periods()) {
                    let dev = (m.eval_real(&at).det() - 1.0).abs();
                    if dev > 1e-12 {
                        return Err(Error::NotUnimodular { dev, at });
                    }
                }
                // The fiber's winding per axis must match its declaration.
                for axis in 0..d {
                    let sampled = winding_along_axis(m, axis)?;
                    if sampled != self.homotopy_degree[axis] {
                        return Err(Error::DegreeMismatch {
                            declared: self.homotopy_degree[axis],
                            sampled,
                            axis,
                        });
                    }
                }
            }
            Fiber::ExpPair { a, g } => {
                if g.dim() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: g.dim(),
                        context: "fiber series torus",
                    });
                }
                let tol = 1e-9 * (1.0 + a.norm_fro());
                if a.trace().abs() > tol {
                    return Err(Error::NotTraceFree {
                        trace: a.trace().abs(),
                        tol,
                    });
                }
                check_real_entries(g, "the fiber generator")?;
                let tr = g.trace()?.norm_h(0.0);
                let gtol = 1e-9 * (1.0 + g.norm_h(0.0));
                if tr > gtol {
                    return Err(Error::NotTraceFree { trace: tr, tol: gtol });
                }
                // exp(a) exp(g) is null-homotopic, so the degree must vanish.
                for (axis, &k) in self.homotopy_degree.iter().enumerate() {
                    if k != 0 {
                        return Err(Error::DegreeMismatch {
                            declared: k,
                            sampled: 0,
                            axis,
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Hoist constant work (matrix exponentials, constant fibers) out of the
    /// per-step evaluation.
    pub fn evaluator(&self) -> FiberEval<'_> {
        let kind = match &self.fiber {
            Fiber::Series { m } => {
                if m.support_box().iter().all(|&b| b == 0) {
                    EvalKind::Constant(m.eval_real(&vec![0.0; m.dim()]))
                } else {
                    EvalKind::Series(m)
                }
            }
            Fiber::ExpPair { a, g } => {
                let ea = a.exp_tracefree();
                if g.support_box().iter().all(|&b| b == 0) {
                    EvalKind::Constant(ea.mul(&g.eval_real(&vec![0.0; g.dim()]).exp_tracefree()))
                } else {
                    EvalKind::ExpPair { ea, g }
                }
            }
        };
        FiberEval { kind }
    }

    /// Fiber matrix at one point.
    pub fn eval(&self, theta: &[f64]) -> Mat2 {
        self.evaluator().at(theta)
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta.len(),
                context: "base point",
            });
        }
        Ok(())
    }

    /// The n-step product `A(theta + (n-1) mu) ... A(theta)`; `n = 0` gives
    /// the identity. No renormalization: for hyperbolic cocycles keep
    /// `n * lyapunov` well below 700 to stay inside f64 range.
    pub fn iterate(&self, theta: &[f64], n: u64) -> Result<Mat2> {
        self.check_theta(theta)?;
        let ev = self.evaluator();
        let periods = self.periods().to_vec();
        let mut th = theta.to_vec();
        let mut m = Mat2::IDENTITY;
        for _ in 0..n {
            m = ev.at(&th).mul(&m);
            advance(&mut th, &self.mu, &periods);
        }
        Ok(m)
    }

    /// Fibered rotation number: average turning of a solution vector under
    /// the projective action, for a degree-zero cocycle. Reported modulo 1
    /// together with the convergent-denominator accelerated reading.
    pub fn rotation_number(&self, theta0: &[f64], x0: [f64; 2], n: u64) -> Result<CocycleRotation> {
        self.check_theta(theta0)?;
        if self.homotopy_degree.iter().any(|&k| k != 0) {
            return Err(Error::NonzeroDegree(self.homotopy_degree.clone()));
        }
        if n < 10 {
            return Err(Error::InvalidArgument(
                "rotation number needs at least 10 iterations".into(),
            ));
        }
        let nv0 = (x0[0] * x0[0] + x0[1] * x0[1]).sqrt();
        if nv0 < 1e-300 {
            return Err(Error::InvalidArgument(
                "initial vector must be nonzero".into(),
            ));
        }
        let periods = self.periods().to_vec();
        // Checkpoints: half run, full run, and (on a one-dimensional base)
        // the convergent denominators of the base frequency.
        let qs: Vec<u64> = if self.dim() == 1 {
            convergent_denominators(self.mu[0] / periods[0] as f64, n)
        } else {
            Vec::new()
        };
        let mut checks: Vec<u64> = qs.clone();
        checks.push(n / 2);
        checks.push(n);
        checks.sort_unstable();
        checks.dedup();
        checks.retain(|&k| k >= 1);

        let ev = self.evaluator();
        let mut th = theta0.to_vec();
        let mut v = [x0[0] / nv0, x0[1] / nv0];
        let mut angle = 0.0f64;
        let mut near_cut = 0u64;
        let mut snaps: std::collections::BTreeMap<u64, f64> = std::collections::BTreeMap::new();
        let mut ci = 0usize;
        for k in 1..=n {
            let a = ev.at(&th);
            let nv = a.mul_vec(v);
            let cross = v[0] * nv[1] - v[1] * nv[0];
            let dot = v[0] * nv[0] + v[1] * nv[1];
            let dturn = cross.atan2(dot) / TWO_PI;
            // Steps that turn by close to a half turn sit near the branch
            // cut of the per-step principal value; each one risks a +-1
            // miscount, so their density enters the error band.
            if dturn.abs() >= 0.45 {
                near_cut += 1;
            }
            angle += dturn;
            let norm = (nv[0] * nv[0] + nv[1] * nv[1]).sqrt();
            if !(norm > 1e-300) || !norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "orbit vector degenerated at step {k} (norm {norm:.3e})"
                )));
            }
            v = [nv[0] / norm, nv[1] / norm];
            advance(&mut th, &self.mu, &periods);
            while ci < checks.len() && checks[ci] == k {
                snaps.insert(k, angle);
                ci += 1;
            }
        }
        let w = |k: u64| snaps[&k] / k as f64;
        let plain = frac(w(n));
        let q_last = qs.last().copied();
        let accelerated = q_last.map(|q| frac(w(q)));
        let mut cands = vec![plain, frac(w((n / 2).max(1)))];
        if let Some(a) = accelerated {
            cands.push(a);
        }
        if qs.len() >= 2 {
            cands.push(frac(w(qs[qs.len() - 2])));
        }
        let mut err = near_cut as f64 / n as f64;
        for i in 0..cands.len() {
            for j in i + 1..cands.len() {
                err = err.max(circ_dist(cands[i], cands[j]));
            }
        }
        let value = match (q_last, accelerated) {
            (Some(q), Some(a)) if q >= n / 3 => a,
            _ => plain,
        };
        Ok(CocycleRotation {
            value,
            plain,
            accelerated,
            error: err,
            n,
        })
    }

    /// `ln ||A_n(theta)|| / n` at one base point, via an exactly telescoped
    /// renormalized product (operator norm).
    pub fn lyapunov_at(&self, theta: &[f64], n: u64) -> Result<f64> {
        self.check_theta(theta)?;
        if n == 0 {
            return Err(Error::InvalidArgument(
                "Lyapunov exponent needs at least one iteration".into(),
            ));
        }
        let ev = self.evaluator();
        let periods = self.periods().to_vec();
        let mut th = theta.to_vec();
        let mut m = Mat2::IDENTITY;
        let mut s = 0.0f64;
        for k in 0..n {
            m = ev.at(&th).mul(&m);
            let r = m.norm_op();
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Numerical(format!(
                    "product norm degenerated at step {k} (norm {r:.3e})"
                )));
            }
            s += r.ln();
            m = m.scale(1.0 / r);
            advance(&mut th, &self.mu, &periods);
        }
        Ok(s / n as f64)
    }

    /// Lyapunov exponent averaged over 32 seeded-random base points.
    pub fn lyapunov(&self, n: u64) -> Result<CocycleLyapunov> {
        const SAMPLES: usize = 32;
        let mut rng = ChaCha8Rng::seed_from_u64(0x7475_726e_7261_7465);
        let periods = self.periods().to_vec();
        let thetas: Vec<Vec<f64>> = (0..SAMPLES)
            .map(|_| {
                periods
                    .iter()
                    .map(|&p| p as f64 * rng.gen::<f64>())
                    .collect()
            })
            .collect();
        let vals: Vec<f64> = thetas
            .par_iter()
            .map(|th| self.lyapunov_at(th, n))
            .collect::<Result<_>>()?;
        let value = vals.iter().sum::<f64>() / vals.len() as f64;
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(CocycleLyapunov {
            value,
            spread: 0.5 * (hi - lo),
            n,
            samples: SAMPLES,
        })
    }

    /// Conjugated cocycle with fiber `B(theta + mu) A(theta) B(theta)^-1`.
    ///
    /// For a series fiber the product is formed by exact coefficient
    /// convolution; if `box_hint` is given and the exact support exceeds it,
    /// the call fails rather than alias. For an exponential-pair fiber the
    /// product is sampled and projected onto `box_hint` (required), then
    /// verified against the sampler on an offset grid.
    pub fn conjugate(&self, conj: &Conjugacy, box_hint: Option<&[i32]>) -> Result<Cocycle> {
        let d = self.dim();
        if conj.b.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: conj.b.dim(),
                context: "conjugacy torus",
            });
        }
        let periods: Vec<u8> = self
            .periods()
            .iter()
            .zip(conj.b.periods())
            .map(|(&pa, &pb)| pa.max(pb))
            .collect();
        let bp = conj.b.on_periods(&periods)?;
        let bshift = bp.shift(&self.mu)?;
        let badj = bp.adjugate();
        let fiber = match &self.fiber {
            Fiber::Series { m } => {
                let m2 = m.on_periods(&periods)?;
                let prod = bshift.matmul(&m2)?.matmul(&badj)?;
                let scale = prod
                    .e
                    .iter()
                    .flatten()
                    .map(|s| s.max_abs_coeff())
                    .fold(0.0, f64::max)
                    .max(1e-300);
                let mut prod = prod.prune(1e-14 * scale);
                if let Some(bx) = box_hint {
                    let kept = prod.truncate(bx)?;
                    let dropped = prod.sub(&kept)?.norm_h(0.0);
                    if dropped > 1e-12 * scale {
                        return Err(Error::Numerical(format!(
                            "conjugated fiber support {:?} exceeds the configured box {:?} \
                             (dropped coefficient weight {:.3e})",
                            prod.support_box(),
                            bx,
                            dropped
                        )));
                    }
                    prod = kept;
                }
                for row in prod.e.iter_mut() {
                    for s in row.iter_mut() {
                        s.hermitize();
                    }
                }
                prod.tag = MatTag::Sl2RValued;
                Fiber::Series { m: prod }
            }
            // A constant frame conjugates an exponential pair exactly:
            // Q e^a e^g Q^-1 = e^(QaQ^-1) e^(QgQ^-1).
            Fiber::ExpPair { a, g } if bp.support_box().iter().all(|&b| b == 0) => {
                let q = bp.eval_real(&vec![0.0; d]);
                let qinv = q.inverse_unimodular();
                let a2 = q.mul(a).mul(&qinv);
                let g2 = g.on_periods(&periods)?.conjugate_const(&q)?;
                Fiber::ExpPair { a: a2, g: g2 }
            }
            Fiber::ExpPair { .. } => {
                let bx = box_hint.ok_or_else(|| {
                    Error::InvalidArgument(
                        "a projection box is required to conjugate an exponential-pair fiber"
                            .into(),
                    )
                })?;
                if bx.len() != d {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        got: bx.len(),
                        context: "projection box",
                    });
                }
                let ev = self.evaluator();
                let per2 = periods.clone();
                let sampler = |x: &[f64]| {
                    let mut xs = x.to_vec();
                    for (xj, (p_new, p_old)) in xs
                        .iter_mut()
                        .zip(per2.iter().zip(self.periods()))
                    {
                        // Fold the (possibly doubled) sample point back onto
                        // the fiber's own torus.
                        *xj = xj.rem_euclid(*p_old.min(p_new) as f64);
                    }
                    bshift
                        .eval_real(x)
                        .mul(&ev.at(&xs))
                        .mul(&bp.eval_real(x).inverse_unimodular())
                };
                let grid: Vec<usize> = bx.iter().map(|&b| 2 * (2 * b as usize + 1)).collect();
                let mut prod =
                    MatSeries::project_mat(&sampler, &periods, bx, &grid, MatTag::Sl2RValued)?;
                for row in prod.e.iter_mut() {
                    for s in row.iter_mut() {
                        s.hermitize();
                    }
                }
                // Guard against support growth beyond the box: compare the
                // projection with the sampler off the projection lattice.
                let mut worst = 0.0f64;
                let mut scale = 1.0f64;
                for at in probe_points(&periods) {
                    let a = prod.eval_real(&at);
                    let b = sampler(&at);
                    worst = worst.max(a.sub(&b).norm_fro());
                    scale = scale.max(b.norm_fro());
                }
                if worst > 1e-9 * scale {
                    return Err(Error::Numerical(format!(
                        "conjugated fiber is not resolved by box {:?}: off-grid mismatch {:.3e} \
                         (support grew past the configured box)",
                        bx, worst
                    )));
                }
                Fiber::Series { m: prod }
            }
        };
        // Winding of B(theta+mu) and B(theta)^-1 cancel, so the homotopy
        // degree carries over unchanged.
        Cocycle::new(self.mu.clone(), fiber, self.homotopy_degree.clone())
    }

    /// Grid certificate for uniform hyperbolicity: the singular-value gap of
    /// the n-step product must clear `(1+margin)^2` at every grid point and
    /// the expanding direction must vary by less than 1/8 turn (so its
    /// half-turn-periodic angle is tracked unambiguously) between adjacent
    /// grid points. A gap below `1+margin` anywhere certifies failure at
    /// this depth. Heuristic: grid and depth are finite, no interval bounds.
    pub fn uh_certificate(&self, n: u64, grid: &[usize], margin: f64) -> Result<UhCertificate> {
        if !(margin > 0.0) || !margin.is_finite() {
            return Err(Error::InvalidArgument("margin must be positive".into()));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("certificate depth must be >= 1".into()));
        }
        let d = self.dim();
        if grid.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: grid.len(),
                context: "certificate grid",
            });
        }
        if grid.iter().any(|&g| g < 2) {
            return Err(Error::InvalidArgument(
                "certificate grid needs at least 2 points per axis".into(),
            ));
        }
        let periods = self.periods().to_vec();
        let pts = grid_points(&periods, grid);
        let ev = self.evaluator();
        let stats: Vec<(f64, f64)> = pts
            .par_iter()
            .map(|pt| {
                let mut th = pt.clone();
                let mut m = Mat2::IDENTITY;
                for _ in 0..n {
                    m = ev.at(&th).mul(&m);
                    let r = m.norm_fro();
                    m = m.scale(1.0 / r);
                    advance(&mut th, &self.mu, &periods);
                }
                let (s1, s2) = m.singular_values();
                let gap = if s2 > 0.0 { s1 / s2 } else { f64::INFINITY };
                (gap, m.expanding_direction_turns())
            })
            .collect();
        let (mut min_gap, mut argmin) = (f64::INFINITY, 0usize);
        for (i, &(g, _)) in stats.iter().enumerate() {
            if g < min_gap {
                min_gap = g;
                argmin = i;
            }
        }
        if min_gap < 1.0 + margin {
            return Ok(UhCertificate::CertifiedNotUh {
                n,
                witness: pts[argmin].clone(),
                gap: min_gap,
            });
        }
        // Adjacent-point oscillation of the expanding direction (a line,
        // compared modulo a half turn), wrapping around every axis.
        let mut strides = vec![1usize; d];
        for j in (0..d.saturating_sub(1)).rev() {
            strides[j] = strides[j + 1] * grid[j + 1];
        }
        let mut max_jump = 0.0f64;
        for (i, &(_, dir)) in stats.iter().enumerate() {
            for j in 0..d {
                let ij = (i / strides[j]) % grid[j];
                let nb = if ij + 1 == grid[j] {
                    i - ij * strides[j]
                } else {
                    i + strides[j]
                };
                let raw = (dir - stats[nb].1).rem_euclid(0.5);
                max_jump = max_jump.max(raw.min(0.5 - raw));
            }
        }
        if min_gap >= (1.0 + margin) * (1.0 + margin) && max_jump < 0.125 {
            Ok(UhCertificate::CertifiedUh {
                n,
                min_gap,
                max_direction_jump: max_jump,
            })
        } else {
            let reason = if max_jump >= 0.125 {
                format!(
                    "expanding direction jumps {max_jump:.3} turns between adjacent grid points \
                     (limit 0.125); refine the grid"
                )
            } else {
                format!(
                    "minimal gap {min_gap:.6e} sits between 1+margin and (1+margin)^2; \
                     deepen n or lower margin"
                )
            };
            Ok(UhCertificate::Inconclusive {
                n,
                min_gap,
                max_direction_jump: max_jump,
                reason,
            })
        }
    }
}

/// A change of frames `B` acting on cocycles by
/// `A(theta) -> B(theta + mu) A(theta) B(theta)^-1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Conjugacy {
    /// SL(2,R)-valued series, possibly on a doubled torus.
    pub b: MatSeries,
    /// Winding of `theta -> B(theta) e_1`, one integer per axis.
    pub degree: Vec<i64>,
    /// True when `b` lives on a doubled torus (some axis has period 2).
    pub half_period: bool,
}

impl Conjugacy {
    pub fn new(b: MatSeries, degree: Vec<i64>) -> Result<Conjugacy> {
        let half_period = b.periods().iter().any(|&p| p == 2);
        let c = Conjugacy {
            b,
            degree,
            half_period,
        };
        c.validate()?;
        Ok(c)
    }

    /// Check realness, unimodularity on a probe grid, the declared winding
    /// degree along every axis, and the half-period flag.
    pub fn validate(&self) -> Result<()> {
        let d = self.b.dim();
        if self.degree.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.degree.len(),
                context: "conjugacy degree vector",
            });
        }
        let computed_half = self.b.periods().iter().any(|&p| p == 2);
        if self.half_period != computed_half {
            return Err(Error::InvalidArgument(format!(
                "half_period flag is {} but the series periods are {:?}",
                self.half_period,
                self.b.periods()
            )));
        }
        check_real_entries(&self.b, "the conjugacy")?;
        for at in probe_points(self.b.periods()) {
            let dev = (self.b.eval_real(&at).det() - 1.0).abs();
            if dev > 1e-12 {
                return Err(Error::NotUnimodular { dev, at });
            }
        }
        for axis in 0..d {
            let sampled = winding_along_axis(&self.b, axis)?;
            if sampled != self.degree[axis] {
                return Err(Error::DegreeMismatch {
                    declared: self.degree[axis],
                    sampled,
                    axis,
                });
            }
        }
        Ok(())
    }
}

/// Winding number, in turns, of the closed plane curve `t -> sampler(t)`,
/// `t` in `[0, period]`. The grid is refined until every step turns less
/// than a quarter turn; the total must close to an integer within 1e-6.
pub fn winding_loop(sampler: impl Fn(f64) -> [f64; 2], period: f64) -> Result<i64> {
    let mut n = 256usize;
    let (mut bad_step, mut bad_at) = (0.0f64, 0usize);
    while n <= (1 << 20) {
        let mut v = sampler(0.0);
        let mut total = 0.0f64;
        let mut ok = true;
        for i in 1..=n {
            let t = period * i as f64 / n as f64;
            let w = sampler(t);
            if (w[0] * w[0] + w[1] * w[1]).sqrt() < 1e-300 {
                return Err(Error::Numerical(format!(
                    "curve passes through the origin near t = {t:.6}"
                )));
            }
            let cross = v[0] * w[1] - v[1] * w[0];
            let dot = v[0] * w[0] + v[1] * w[1];
            let dturn = cross.atan2(dot) / TWO_PI;
            if dturn.abs() >= 0.25 {
                ok = false;
                bad_step = dturn;
                bad_at = i;
                break;
            }
            total += dturn;
            v = w;
        }
        if ok {
            let r = total.round();
            if (total - r).abs() > 1e-6 {
                return Err(Error::Numerical(format!(
                    "winding total {total:.9} does not close to an integer within 1e-6"
                )));
            }
            return Ok(r as i64);
        }
        n *= 4;
    }
    Err(Error::WindingGridTooCoarse {
        step: bad_step,
        at: bad_at,
    })
}

/// Winding of the first column of `b` along one axis (other coordinates
/// held at a fixed offset off the lattice).
fn winding_along_axis(b: &MatSeries, axis: usize) -> Result<i64> {
    let d = b.dim();
    let base: Vec<f64> = (0..d).map(|j| 0.2183 * (j as f64 + 1.0)).collect();
    let p = b.periods()[axis] as f64;
    winding_loop(
        |t| {
            let mut x = base.clone();
            x[axis] = t;
            let m = b.eval_real(&x);
            [m.0[0][0], m.0[1][0]]
        },
        p,
    )
}

/// Homotopy degree of an SL(2,R)-valued loop on a one-dimensional torus:
/// the winding of its first column over one period.
pub fn degree(b: &MatSeries) -> Result<i64> {
    if b.dim() != 1 {
        return Err(Error::InvalidArgument(
            "winding degree is computed on a one-dimensional base".into(),
        ));
    }
    winding_along_axis(b, 0)
}

/// The Schrodinger cocycle of potential `v` at energy `e`: fiber
/// `[[v(theta) - e, -1], [1, 0]]` over the translation by `mu`.
pub fn schrodinger_cocycle(v: &TrigSeries, e: f64, mu: &[f64]) -> Result<Cocycle> {
    if !e.is_finite() {
        return Err(Error::InvalidArgument("energy must be finite".into()));
    }
    let scale = v.max_abs_coeff().max(1e-300);
    if !v.is_hermitian(1e-12 * scale) {
        return Err(Error::InvalidArgument(
            "the potential must be a real-valued series".into(),
        ));
    }
    if mu.len() != v.dim() {
        return Err(Error::DimensionMismatch {
            expected: v.dim(),
            got: mu.len(),
            context: "potential torus vs frequency vector",
        });
    }
    let periods = v.periods();
    let e00 = v.sub(&TrigSeries::constant(periods, e.into())?)?;
    let e01 = TrigSeries::constant(periods, (-1.0).into())?;
    let e10 = TrigSeries::constant(periods, 1.0.into())?;
    let e11 = TrigSeries::zero(periods)?;
    let m = MatSeries::from_entries([[e00, e01], [e10, e11]], MatTag::Sl2RValued)?;
    Cocycle::new(mu.to_vec(), Fiber::Series { m }, vec![0; mu.len()])
}

/// Rotation number and Lyapunov exponent of the Schrodinger family over an
/// energy grid, with a nondecreasing-rotation check between neighboring
/// energies (violations beyond the combined error bands are flagged on the
/// later row).
pub fn scan_energy(
    v: &TrigSeries,
    mu: &[f64],
    energies: &[f64],
    n_rot: u64,
    n_lyap: u64,
) -> Result<Vec<ScanRow>> {
    if energies.is_empty() {
        return Err(Error::InvalidArgument("energy grid is empty".into()));
    }
    let theta0 = vec![0.0; mu.len()];
    let mut rows: Vec<ScanRow> = energies
        .par_iter()
        .map(|&e| {
            let c = schrodinger_cocycle(v, e, mu)?;
            let rot = c.rotation_number(&theta0, [1.0, 0.0], n_rot)?;
            let ly = c.lyapunov(n_lyap)?;
            Ok(ScanRow {
                e,
                rot: rot.value,
                lyap: ly.value,
                rot_err: rot.error,
                monotone_ok: true,
            })
        })
        .collect::<Result<_>>()?;
    for i in 1..rows.len() {
        // Signed circular increment; negative beyond the bands is a
        // monotonicity violation.
        let diff = frac(rows[i].rot - rows[i - 1].rot + 0.5) - 0.5;
        if diff < -(rows[i].rot_err + rows[i - 1].rot_err + 1e-12) {
            rows[i].monotone_ok = false;
        }
    }
    Ok(rows)
}
