//! Quasi-periodic linear flows on `T^d x R^2` and their diagnostics.
//!
//! A system is `theta' = mu`, `v' = (A + F(theta)) v` with `A` constant
//! trace-free and `F` a real trace-free series. Fundamental solutions are
//! integrated with a commutator-free fourth-order exponential scheme whose
//! steps are products of exact trace-free exponentials, so the solution's
//! determinant is 1 to rounding regardless of step size.

use serde::{Deserialize, Serialize};

use crate::arithmetic::convergent_denominators;
use crate::fourier::{MatSeries, MatTag};
use crate::mat2::Mat2;
use crate::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;
const SQRT3: f64 = 1.732_050_807_568_877_2;

fn default_schema() -> String {
    crate::SCHEMA.to_string()
}

/// Quasi-periodic linear system `v' = (A + F(theta_0 + t mu)) v`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QPSystem {
    #[serde(default = "default_schema")]
    pub schema: String,
    /// Base frequency vector; the base torus has `F.periods()` per axis.
    pub mu: Vec<f64>,
    /// Constant trace-free part.
    #[serde(rename = "A")]
    pub a: Mat2,
    /// Quasi-periodic trace-free part.
    #[serde(rename = "F")]
    pub f: MatSeries,
    /// Analyticity width the coefficients are certified on (metadata used
    /// for norms and step-size heuristics).
    pub h: f64,
}

impl QPSystem {
    pub fn new(mu: Vec<f64>, a: Mat2, f: MatSeries, h: f64) -> Result<QPSystem> {
        let sys = QPSystem {
            schema: default_schema(),
            mu,
            a,
            f,
            h,
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != crate::SCHEMA {
            return Err(Error::InvalidArgument(format!(
                "unsupported schema {:?}, expected {:?}",
                self.schema,
                crate::SCHEMA
            )));
        }
        if self.mu.is_empty() || self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "mu must be finite and non-empty".into(),
            ));
        }
        if self.f.dim() != self.mu.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu.len(),
                got: self.f.dim(),
                context: "system F dimension vs mu",
            });
        }
        if !(self.h >= 0.0) {
            return Err(Error::InvalidArgument("width h must be >= 0".into()));
        }
        let scale = 1.0 + self.a.norm_fro() + self.f.norm_h(0.0);
        let tol = 1e-9 * scale;
        if self.a.trace().abs() > tol {
            return Err(Error::NotTraceFree {
                trace: self.a.trace(),
                tol,
            });
        }
        let tr = self.f.trace()?;
        if tr.norm_h(0.0) > tol {
            return Err(Error::NotTraceFree {
                trace: tr.norm_h(0.0),
                tol,
            });
        }
        for s in self.f.e.iter().flatten() {
            if !s.is_hermitian(tol) {
                return Err(Error::InvalidArgument(
                    "system F must be real-valued (Hermitian coefficients)".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Generator `A + F(theta)`, re-symmetrized to exact zero trace so the
    /// closed-form exponential stays on the unimodular group.
    pub fn generator(&self, theta: &[f64]) -> Mat2 {
        let g = self.a.add(&self.f.eval_real(theta));
        let c = 0.5 * g.trace();
        g.sub(&Mat2::diag(c, c))
    }

    /// Fastest temporal frequency of `F` along the flow, in cycles per unit
    /// time.
    fn max_temporal_frequency(&self) -> f64 {
        let mut nu: f64 = 0.0;
        for s in self.f.e.iter().flatten() {
            for k in s.coeffs().keys() {
                let v: f64 = k
                    .iter()
                    .zip(&self.mu)
                    .zip(self.f.periods())
                    .map(|((kj, mj), p)| *kj as f64 * mj / *p as f64)
                    .sum();
                nu = nu.max(v.abs());
            }
        }
        nu
    }

    /// Largest step the integrator will attempt: at most 0.05, at most a
    /// quarter of the analyticity width (when positive), and at most a
    /// quarter of the fastest oscillation period of the coefficients.
    pub fn max_step(&self) -> f64 {
        let width_cap = if self.h > 0.0 { self.h / 4.0 } else { f64::INFINITY };
        (0.25 / (1.0 + self.max_temporal_frequency()))
            .min(0.05)
            .min(width_cap)
    }

    /// One commutator-free fourth-order step of size `dt` from absolute
    /// time `t` along the orbit of `theta0` (two Gauss nodes, two
    /// exponentials; exact for a constant generator).
    fn cf4_step(&self, theta0: &[f64], t: f64, dt: f64) -> Mat2 {
        let at = |s: f64| -> Mat2 {
            let theta: Vec<f64> = theta0
                .iter()
                .zip(&self.mu)
                .map(|(th, m)| th + s * m)
                .collect();
            self.generator(&theta)
        };
        let g1 = at(t + (0.5 - SQRT3 / 6.0) * dt);
        let g2 = at(t + (0.5 + SQRT3 / 6.0) * dt);
        let a1 = 0.25 + SQRT3 / 6.0;
        let a2 = 0.25 - SQRT3 / 6.0;
        let first = g1.scale(a1 * dt).add(&g2.scale(a2 * dt));
        let second = g1.scale(a2 * dt).add(&g2.scale(a1 * dt));
        second.exp_tracefree().mul(&first.exp_tracefree())
    }

    /// Adaptive integration from time 0 to `t` along the orbit of `theta0`
    /// with step doubling: a step is accepted when the Richardson estimate
    /// fits the share `tol |dt| / max(|t|, 1)` of the global budget, and the
    /// two-half-step composition is kept.
    ///
    /// `on_step` receives every accepted increment `(time_after, step)`;
    /// the fundamental solution is the ordered product of the increments.
    /// Consumers that only need directions can renormalize as they fold,
    /// which keeps arbitrarily long hyperbolic integrations in range.
    fn integrate_adaptive<C>(
        &self,
        theta0: &[f64],
        t: f64,
        tol: f64,
        max_step: f64,
        mut on_step: C,
    ) -> Result<()>
    where
        C: FnMut(f64, &Mat2) -> Result<()>,
    {
        if theta0.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: theta0.len(),
                context: "initial phase",
            });
        }
        if !(tol > 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument("need tol > 0 and finite time".into()));
        }
        if t == 0.0 {
            return Ok(());
        }
        let dir = t.signum();
        let t_abs = t.abs();
        let mut now = 0.0f64; // unsigned elapsed time
        let mut dt = max_step.min(t_abs);
        while t_abs - now > 1e-12 * t_abs.max(1.0) {
            let step = dt.min(t_abs - now).min(max_step);
            let signed = dir * step;
            let t0 = dir * now;
            let full = self.cf4_step(theta0, t0, signed);
            let h1 = self.cf4_step(theta0, t0, 0.5 * signed);
            let h2 = self.cf4_step(theta0, t0 + 0.5 * signed, 0.5 * signed);
            let fine = h2.mul(&h1);
            let err = full.sub(&fine).norm_fro() / 15.0;
            let budget = tol * step / t_abs.max(1.0);
            if err <= budget {
                now += step;
                on_step(dir * now, &fine)?;
                let grow = if err == 0.0 {
                    2.0
                } else {
                    (0.9 * (budget / err).powf(0.2)).clamp(1.0, 2.0)
                };
                dt = step * grow;
            } else {
                dt = step * (0.9 * (budget / err).powf(0.2)).clamp(0.1, 0.9);
                if dt < 1e-9 {
                    return Err(Error::StepUnderflow {
                        t: dir * now,
                        step: dt,
                    });
                }
            }
        }
        Ok(())
    }

    /// Fundamental solution `Phi^t(theta0)`.
    pub fn integrate(&self, theta0: &[f64], t: f64, tol: f64) -> Result<Mat2> {
        let mut phi = Mat2::IDENTITY;
        self.integrate_adaptive(theta0, t, tol, self.max_step(), |_, s| {
            phi = s.mul(&phi);
            Ok(())
        })?;
        Ok(phi)
    }

    /// Time-one map `Phi^1(theta0)`.
    pub fn poincare(&self, theta0: &[f64], tol: f64) -> Result<Mat2> {
        self.integrate(theta0, 1.0, tol)
    }

    /// Reduce a phase to the fundamental domain of the base torus.
    fn wrap(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.f.periods())
            .map(|(x, p)| x.rem_euclid(*p as f64))
            .collect()
    }

    fn phase_at(&self, theta0: &[f64], t: f64) -> Vec<f64> {
        self.wrap(
            &theta0
                .iter()
                .zip(&self.mu)
                .map(|(th, m)| th + t * m)
                .collect::<Vec<f64>>(),
        )
    }

    /// Rotation number of the flow: counterclockwise turns per unit time of
    /// a solution vector, measured up to `t_max` with an oscillation-based
    /// error band. On a one-dimensional base the headline value is read at
    /// the largest convergent-denominator time (where the base orbit nearly
    /// closes) when one lies deep enough in the run.
    pub fn rotation_number(&self, theta0: &[f64], t_max: f64, tol: f64) -> Result<FlowRotation> {
        if !(t_max >= 10.0) {
            return Err(Error::InvalidArgument(
                "rotation number needs t_max >= 10".into(),
            ));
        }
        // Keep every accepted step's winding under a quarter turn: the
        // angular speed of a solution vector is bounded by the generator's
        // norm in radians per unit time.
        let speed = self.a.norm_fro() + 2.0 * self.f.norm_h(0.0) + 1e-9;
        let max_step = self.max_step().min(0.4 * std::f64::consts::PI / speed);

        // Strictly increasing checkpoints ending exactly at t_max; the
        // leading ones (on a 1-d base) are convergent denominators.
        let qs: Vec<f64> = if self.dim() == 1 {
            convergent_denominators(self.mu[0], t_max as u64)
                .into_iter()
                .map(|q| q as f64)
                .filter(|q| *q < t_max - 1e-9)
                .collect()
        } else {
            Vec::new()
        };
        let n_q = qs.len();
        let mut checks = qs;
        checks.push(t_max);

        let mut v = [1.0f64, 0.0];
        let mut angle = 0.0f64; // turns, continuously unwrapped
        let mut window: Vec<f64> = Vec::new(); // angle/t over the last decade
        let mut at_checks: Vec<(f64, f64)> = Vec::new();
        let mut t_done = 0.0f64;
        for &tc in &checks {
            let seg = tc - t_done;
            let theta = self.phase_at(theta0, t_done);
            let base_t = t_done;
            self.integrate_adaptive(&theta, seg, tol, max_step, |tloc, step| {
                let nv = step.mul_vec(v);
                let cross = v[0] * nv[1] - v[1] * nv[0];
                let dot = v[0] * nv[0] + v[1] * nv[1];
                let dturn = cross.atan2(dot) / TWO_PI;
                if dturn.abs() >= 0.25 {
                    return Err(Error::Numerical(format!(
                        "winding step of {dturn:.3} turns at t = {:.3} exceeds the quarter-turn guard",
                        base_t + tloc
                    )));
                }
                angle += dturn;
                let norm = (nv[0] * nv[0] + nv[1] * nv[1]).sqrt();
                v = [nv[0] / norm, nv[1] / norm];
                let t_now = base_t + tloc;
                if t_now >= 0.1 * t_max {
                    window.push(angle / t_now);
                }
                Ok(())
            })?;
            t_done = tc;
            at_checks.push((tc, angle / tc));
        }
        // Headline value: the last near-closing time if it covers at least a
        // third of the run, otherwise the full run.
        let plain = at_checks.last().unwrap().1;
        let accelerated = if n_q >= 1 { Some(at_checks[n_q - 1].1) } else { None };
        let (t_best, value) = if n_q >= 1 && at_checks[n_q - 1].0 >= t_max / 3.0 {
            at_checks[n_q - 1]
        } else {
            *at_checks.last().unwrap()
        };
        let osc = if window.len() >= 2 {
            let lo = window.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = window.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (hi - lo)
        } else {
            0.5 / t_max
        };
        let check_diff = if n_q >= 2 {
            (at_checks[n_q - 1].1 - at_checks[n_q - 2].1).abs()
        } else {
            0.0
        };
        Ok(FlowRotation {
            value,
            plain,
            accelerated,
            error: osc.max(check_diff),
            t_final: t_best,
        })
    }

    /// Top Lyapunov exponent of the flow (natural-log units per unit time)
    /// by unit-time renormalization of a solution vector.
    pub fn lyapunov(&self, theta0: &[f64], t_max: f64, tol: f64) -> Result<FlowLyapunov> {
        let blocks = t_max.floor() as u64;
        if blocks < 10 {
            return Err(Error::InvalidArgument(
                "Lyapunov exponent needs t_max >= 10".into(),
            ));
        }
        let mut v = [
            std::f64::consts::FRAC_1_SQRT_2,
            std::f64::consts::FRAC_1_SQRT_2,
        ];
        // Discard a burn-in prefix: it carries the alignment transient of
        // the initial vector, an O(1/t_max) bias on the average.
        let burn = (blocks / 10).max(1);
        let mut log_sum = 0.0f64;
        let mut at_burn = 0.0f64;
        let mut at_half = 0.0f64;
        for n in 0..blocks {
            let theta = self.phase_at(theta0, n as f64);
            let phi = self.integrate(&theta, 1.0, tol)?;
            let nv = phi.mul_vec(v);
            let norm = (nv[0] * nv[0] + nv[1] * nv[1]).sqrt();
            log_sum += norm.ln();
            v = [nv[0] / norm, nv[1] / norm];
            if n + 1 == burn {
                at_burn = log_sum;
            }
            if n + 1 == blocks / 2 {
                at_half = log_sum;
            }
        }
        let value = (log_sum - at_burn) / (blocks - burn) as f64;
        let half_value = (at_half - at_burn) / (blocks / 2 - burn) as f64;
        Ok(FlowLyapunov {
            value,
            error: (value - half_value).abs(),
            t_final: blocks as f64,
        })
    }
}

/// Rotation-number estimate for a flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowRotation {
    /// Turns per unit time (counterclockwise positive).
    pub value: f64,
    /// Estimate read at the full run time, with no near-closing acceleration.
    pub plain: f64,
    /// Estimate read at the last near-closing time of the base orbit, when
    /// one exists (one-dimensional base only).
    pub accelerated: Option<f64>,
    /// Half-width of the observed fluctuation band (or checkpoint drift,
    /// whichever is larger).
    pub error: f64,
    /// Time the headline value was read at.
    pub t_final: f64,
}

/// Lyapunov-exponent estimate for a flow.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct FlowLyapunov {
    pub value: f64,
    pub error: f64,
    pub t_final: f64,
}

/// Convenience constructor: purely constant system (`F = 0`) on `T^d`.
pub fn constant_system(mu: Vec<f64>, a: Mat2, h: f64) -> Result<QPSystem> {
    let periods = vec![1u8; mu.len()];
    let f = MatSeries::zero(&periods, MatTag::Sl2R)?;
    QPSystem::new(mu, a, f, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algebra::{h_matrix, j_matrix};
    use crate::fourier::TrigSeries;
    use num_complex::Complex64;

    fn golden() -> f64 {
        crate::arithmetic::Alpha::golden().to_f64()
    }

    /// Classical fixed-step RK4 on the matrix equation, as an independent
    /// reference integrator.
    fn rk4_fixed(g: impl Fn(f64) -> Mat2, t1: f64, n: usize) -> Mat2 {
        let h = t1 / n as f64;
        let mut y = Mat2::IDENTITY;
        for i in 0..n {
            let t = i as f64 * h;
            let k1 = g(t).mul(&y);
            let k2 = g(t + 0.5 * h).mul(&y.add(&k1.scale(0.5 * h)));
            let k3 = g(t + 0.5 * h).mul(&y.add(&k2.scale(0.5 * h)));
            let k4 = g(t + h).mul(&y.add(&k3.scale(h)));
            y = y.add(
                &k1.add(&k2.scale(2.0))
                    .add(&k3.scale(2.0))
                    .add(&k4)
                    .scale(h / 6.0),
            );
        }
        y
    }

    fn cf4_fixed(sys: &QPSystem, theta0: &[f64], t1: f64, n: usize) -> Mat2 {
        let h = t1 / n as f64;
        let mut y = Mat2::IDENTITY;
        for i in 0..n {
            y = sys.cf4_step(theta0, i as f64 * h, h).mul(&y);
        }
        y
    }

    fn wobble_system() -> QPSystem {
        // Noncommuting: rotation plus an oscillating shear.
        let c = |re: f64| Complex64::new(re, 0.0);
        let f00 =
            TrigSeries::from_coeffs(&[1], [(vec![1], c(0.15)), (vec![-1], c(0.15))]).unwrap();
        let f01 = TrigSeries::from_coeffs(
            &[1],
            [
                (vec![1], Complex64::new(0.0, -0.2)),
                (vec![-1], Complex64::new(0.0, 0.2)),
            ],
        )
        .unwrap();
        let f10 = TrigSeries::zero(&[1]).unwrap();
        let f11 = f00.scale_real(-1.0);
        let f = MatSeries::from_entries([[f00, f01], [f10, f11]], MatTag::Sl2R).unwrap();
        QPSystem::new(vec![golden()], Mat2::new(0.0, 0.4, -0.1, 0.0), f, 0.3).unwrap()
    }

    #[test]
    fn constant_generator_integrates_exactly() {
        let a = Mat2::new(0.0, 1.3, -0.2, 0.0);
        let sys = constant_system(vec![golden()], a, 0.5).unwrap();
        for t in [0.4, 2.7, -1.9] {
            let got = sys.integrate(&[0.123], t, 1e-10).unwrap();
            let want = a.scale(t).exp_tracefree();
            assert!(got.sub(&want).norm_fro() < 1e-11, "t = {t}");
        }
    }

    #[test]
    fn commuting_oscillation_matches_closed_form() {
        // v' = cos(2 pi theta(t)) J v: generators commute, the solution is
        // exp(J * int cos).
        let c = Complex64::new(0.5, 0.0);
        let phi_series = TrigSeries::from_coeffs(&[1], [(vec![1], c), (vec![-1], c)]).unwrap();
        let zero = TrigSeries::zero(&[1]).unwrap();
        let f = MatSeries::from_entries(
            [
                [zero.clone(), phi_series.clone()],
                [phi_series.scale_real(-1.0), zero],
            ],
            MatTag::Sl2R,
        )
        .unwrap();
        let mu = golden();
        let sys = QPSystem::new(vec![mu], Mat2::ZERO, f, 0.4).unwrap();
        let theta0 = 0.37;
        let t = 3.21;
        let integral =
            ((TWO_PI * (theta0 + t * mu)).sin() - (TWO_PI * theta0).sin()) / (TWO_PI * mu);
        let want = j_matrix().scale(integral).exp_tracefree();
        let got = sys.integrate(&[theta0], t, 1e-11).unwrap();
        assert!(got.sub(&want).norm_fro() < 1e-9);
    }

    #[test]
    fn scheme_is_fourth_order() {
        let sys = wobble_system();
        let theta0 = [0.21];
        let reference = cf4_fixed(&sys, &theta0, 1.0, 4096);
        let e32 = cf4_fixed(&sys, &theta0, 1.0, 32).sub(&reference).norm_fro();
        let e64 = cf4_fixed(&sys, &theta0, 1.0, 64).sub(&reference).norm_fro();
        let ratio = e32 / e64;
        assert!(
            (11.0..22.0).contains(&ratio),
            "order-4 halving ratio {ratio} (e32 {e32:.3e}, e64 {e64:.3e})"
        );
        // And it agrees with an unrelated reference scheme.
        let rk = rk4_fixed(|t| sys.generator(&[theta0[0] + t * sys.mu[0]]), 1.0, 20_000);
        assert!(reference.sub(&rk).norm_fro() < 1e-9);
    }

    #[test]
    fn determinant_stays_unimodular_over_long_times() {
        let sys = wobble_system();
        let phi = sys.integrate(&[0.05], 50.0, 1e-8).unwrap();
        assert!((phi.det() - 1.0).abs() < 1e-11, "det {}", phi.det());
    }

    #[test]
    fn flow_property_holds() {
        let sys = wobble_system();
        let theta0 = [0.41];
        let (s, t) = (1.3, 2.2);
        let whole = sys.integrate(&theta0, s + t, 1e-11).unwrap();
        let first = sys.integrate(&theta0, t, 1e-11).unwrap();
        let shifted = [theta0[0] + t * sys.mu[0]];
        let second = sys.integrate(&shifted, s, 1e-11).unwrap();
        assert!(whole.sub(&second.mul(&first)).norm_fro() < 1e-9);
    }

    #[test]
    fn poincare_composes_into_integer_times() {
        let sys = wobble_system();
        let mut acc = Mat2::IDENTITY;
        for n in 0..5 {
            let theta = [(0.3 + n as f64 * sys.mu[0]).rem_euclid(1.0)];
            acc = sys.poincare(&theta, 1e-11).unwrap().mul(&acc);
        }
        let direct = sys.integrate(&[0.3], 5.0, 1e-11).unwrap();
        assert!(acc.sub(&direct).norm_fro() < 1e-9);
    }

    #[test]
    fn unreachable_tolerance_underflows_the_step() {
        let sys = wobble_system();
        let err = sys.integrate(&[0.0], 1.0, 1e-300).unwrap_err();
        assert!(matches!(err, Error::StepUnderflow { .. }));
    }

    #[test]
    fn rotation_number_of_pure_rotation_flow() {
        // v' = 2 pi rho J v winds by -rho turns per unit time.
        for rho in [0.31, -0.17] {
            let sys =
                constant_system(vec![golden()], j_matrix().scale(TWO_PI * rho), 0.4).unwrap();
            let rot = sys.rotation_number(&[0.0], 200.0, 1e-8).unwrap();
            assert!(
                (rot.value + rho).abs() < 1e-8,
                "rho {rho}: got {} +- {}",
                rot.value,
                rot.error
            );
            assert!(rot.error < 1e-6);
        }
    }

    #[test]
    fn fast_rotation_respects_quarter_turn_guard() {
        let sys = constant_system(vec![golden()], j_matrix().scale(TWO_PI * 10.0), 0.4).unwrap();
        let rot = sys.rotation_number(&[0.0], 50.0, 1e-8).unwrap();
        assert!((rot.value + 10.0).abs() < 1e-7, "got {}", rot.value);
    }

    #[test]
    fn rotation_number_sees_quasi_periodic_modulation() {
        let sys = wobble_system();
        let rot = sys.rotation_number(&[0.0], 300.0, 1e-8).unwrap();
        let rot_long = sys.rotation_number(&[0.0], 600.0, 1e-8).unwrap();
        assert!(
            (rot.value - rot_long.value).abs() <= rot.error + rot_long.error,
            "bands too optimistic: {} +- {} vs {} +- {}",
            rot.value,
            rot.error,
            rot_long.value,
            rot_long.error
        );
    }

    #[test]
    fn long_hyperbolic_rotation_does_not_overflow() {
        // Norm of the fundamental solution would reach e^300 here; the
        // renormalized winding must stay finite and close to zero.
        let sys = constant_system(vec![golden()], h_matrix().scale(0.5), 0.4).unwrap();
        let rot = sys.rotation_number(&[0.0], 600.0, 1e-8).unwrap();
        assert!(rot.value.is_finite());
        assert!(rot.value.abs() < 1e-6, "got {}", rot.value);
    }

    #[test]
    fn lyapunov_of_constant_hyperbolic_flow() {
        let rate = 0.7;
        let sys = constant_system(vec![golden()], h_matrix().scale(rate), 0.4).unwrap();
        let le = sys.lyapunov(&[0.0], 400.0, 1e-8).unwrap();
        assert!(
            (le.value - rate).abs() < 1e-6,
            "got {} +- {}",
            le.value,
            le.error
        );
        // Pure rotation has zero exponent.
        let rot = constant_system(vec![golden()], j_matrix().scale(0.9), 0.4).unwrap();
        let le0 = rot.lyapunov(&[0.0], 200.0, 1e-8).unwrap();
        assert!(le0.value.abs() < 1e-6);
    }

    #[test]
    fn serde_round_trip_and_validation() {
        let sys = wobble_system();
        let json = serde_json::to_string(&sys).unwrap();
        assert!(json.contains("\"schema\":\"qpembed/1\""));
        let back: QPSystem = serde_json::from_str(&json).unwrap();
        back.validate().unwrap();
        assert!(back.a.sub(&sys.a).norm_fro() == 0.0);
        let bad = json.replace("\"mu\"", "\"nope\":1,\"mu\"");
        assert!(serde_json::from_str::<QPSystem>(&bad).is_err());
        // Validation rejects a non-trace-free constant part.
        let mut broken = sys.clone();
        broken.a = Mat2::diag(0.3, 0.0);
        assert!(matches!(
            broken.validate().unwrap_err(),
            Error::NotTraceFree { .. }
        ));
    }
}
