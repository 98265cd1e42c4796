//! Release gate: ten end-to-end checks with hard numeric budgets.
//!
//! Each criterion exercises one pillar of the library against closed forms,
//! independent quadrature, or structural identities, and returns a pass flag
//! plus a human-readable detail line with the measured numbers. `run_all`
//! executes all ten; the `selftest` command and the acceptance integration
//! test both print one line per criterion and fail on any false flag.
//!
//! A shared determinant audit collects `|det Phi - 1|` from every flow
//! integration the suite performs (embedding verifications, near-constant
//! time-one maps, conjugacy extensions, cocycle-property probes); criterion
//! eight asserts the aggregate stays at roundoff.

use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::algebra::{e12, j_matrix, to_frame};
use crate::arithmetic::{Alpha, ContinuedFraction};
use crate::cocycles::{schrodinger_cocycle, scan_energy, Cocycle, Conjugacy, Fiber};
use crate::embedding::{
    apply_t, average_conjugated_quadrature, embed_local, extend_conjugacy_to_flow,
    inverse_factor_bound, invert_l_elliptic, invert_t, lift_conjugacy_to_flow, EmbedReport,
};
use crate::flows::QPSystem;
use crate::fourier::{MatSeries, MatTag, TrigSeries};
use crate::instances::{gen_disk_field, gen_perturbation, gen_scalar, InstanceSpec};
use crate::mat2::Mat2;
use crate::Result;

const GOLDEN: f64 = 0.618_033_988_749_894_9;
const TWO_PI: f64 = std::f64::consts::TAU;

/// Outcome of one acceptance criterion.
#[derive(Debug, Clone)]
pub struct CriterionResult {
    /// Position in the canonical ordering, 1-based.
    pub id: usize,
    pub name: &'static str,
    pub pass: bool,
    /// Measured numbers and the bounds they were held to.
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    /// One-line rendering used by the selftest command and the test harness.
    pub fn line(&self) -> String {
        format!(
            "[{:2}] {:<26} {} ({:.1}s) {}",
            self.id,
            self.name,
            if self.pass { "PASS" } else { "FAIL" },
            self.seconds,
            self.detail
        )
    }
}

/// Accumulates `|det Phi - 1|` over every integration the suite performs.
#[derive(Debug, Default, Clone)]
struct DetAudit {
    max_dev: f64,
    integrations: usize,
}

impl DetAudit {
    fn note(&mut self, m: &Mat2) {
        self.note_dev((m.det() - 1.0).abs(), 1);
    }

    fn note_dev(&mut self, dev: f64, count: usize) {
        self.max_dev = self.max_dev.max(dev);
        self.integrations += count;
    }
}

/// Collects labeled bounds; the criterion passes when every bound holds.
struct Check {
    pass: bool,
    notes: Vec<String>,
}

impl Check {
    fn new() -> Check {
        Check {
            pass: true,
            notes: Vec::new(),
        }
    }

    /// Require `value <= bound`, recording both.
    fn le(&mut self, label: &str, value: f64, bound: f64) {
        let ok = value <= bound;
        self.pass &= ok;
        self.notes.push(format!(
            "{label} {value:.3e}{}{bound:.3e}",
            if ok { " <= " } else { " EXCEEDS " }
        ));
    }

    /// Require a named condition to hold.
    fn ok(&mut self, label: &str, ok: bool) {
        self.pass &= ok;
        self.notes
            .push(format!("{label} {}", if ok { "ok" } else { "VIOLATED" }));
    }

    /// Record a number without constraining it.
    fn info(&mut self, label: &str, value: f64) {
        self.notes.push(format!("{label} {value:.3e}"));
    }

    fn finish(self) -> (bool, String) {
        (self.pass, self.notes.join("; "))
    }
}

fn finish(id: usize, name: &'static str, started: Instant, check: Check) -> CriterionResult {
    let (pass, detail) = check.finish();
    CriterionResult {
        id,
        name,
        pass,
        detail,
        seconds: started.elapsed().as_secs_f64(),
    }
}

fn failed(id: usize, name: &'static str, started: Instant, err: crate::Error) -> CriterionResult {
    CriterionResult {
        id,
        name,
        pass: false,
        detail: format!("aborted: {err}"),
        seconds: started.elapsed().as_secs_f64(),
    }
}

/// Offset one-dimensional probe grid in `[0, 1)`.
fn probe_line(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (i as f64 + 0.2183) / n as f64)
        .collect()
}

/// Criterion 1: embed a random analytic perturbation of an elliptic rotation
/// and re-integrate the resulting flow; its time-one map must reproduce the
/// input cocycle on a sup grid, within the advertised iteration and norm
/// budgets, in bounded wall time.
fn elliptic_round_trip(audit: &mut DetAudit) -> (CriterionResult, Option<EmbedReport>) {
    let t0 = Instant::now();
    let name = "elliptic-round-trip";
    let rho = 0.15;
    let h = 0.5;
    let tol = 1e-8;
    let a = j_matrix().scale(TWO_PI * rho);
    let spec = InstanceSpec {
        modes: 5,
        amplitude: 1e-3,
        h,
        mu: vec![GOLDEN],
    };
    let inner = |audit: &mut DetAudit| -> Result<(Check, EmbedReport)> {
        let g = gen_perturbation(2024, &spec)?;
        let rep = embed_local(&a, &g, &spec.mu, h, tol)?;
        let ver = rep.verify(64)?;
        audit.note_dev(ver.det_defect, ver.points);
        let mut ck = Check::new();
        ck.le("iterations", rep.iterations as f64, 15.0);
        ck.le("time-one defect", ver.defect, tol);
        let c = (std::f64::consts::FRAC_PI_2)
            * (TWO_PI * h * (2.0 * rho + 1.0) / (1.0 + GOLDEN)).exp();
        ck.le(
            "field norm vs 1.1*C*input",
            rep.certificates.norm_f,
            1.1 * c * rep.certificates.norm_g,
        );
        ck.le(
            "reported constant drift",
            (rep.certificates.c - c).abs(),
            1e-12 * c,
        );
        Ok((ck, rep))
    };
    match inner(audit) {
        Ok((mut ck, rep)) => {
            ck.le("wall seconds", t0.elapsed().as_secs_f64(), 120.0);
            (finish(1, name, t0, ck), Some(rep))
        }
        Err(e) => (failed(1, name, t0, e), None),
    }
}

/// Criterion 2: embedding a perturbed parabolic shear solves a rescaled
/// problem whose constant part collapses to zero, and the solved field norm
/// scales like the square root of the perturbation size.
fn parabolic_scaling(audit: &mut DetAudit) -> (CriterionResult, Option<EmbedReport>) {
    let t0 = Instant::now();
    let name = "parabolic-scaling";
    let a = e12();
    let h = 0.1;
    let mut inner = || -> Result<(Check, Vec<f64>, EmbedReport)> {
        let mut ck = Check::new();
        let mut norms = Vec::new();
        let mut last = None;
        for &eps in &[1e-4, 1e-6] {
            let spec = InstanceSpec {
                modes: 3,
                amplitude: eps,
                h,
                mu: vec![GOLDEN],
            };
            let g = gen_perturbation(2025, &spec)?;
            let rep = embed_local(&a, &g, &spec.mu, h, 1e-9)?;
            ck.ok(
                &format!("constant part zero at eps {eps:.0e}"),
                rep.a_tilde == Mat2::ZERO && rep.rescaling.is_some(),
            );
            let ver = rep.verify(32)?;
            ck.le(&format!("defect at eps {eps:.0e}"), ver.defect, 1e-9);
            audit.note_dev(ver.det_defect, 32);
            norms.push(rep.certificates.norm_f);
            last = Some(rep);
        }
        Ok((ck, norms, last.expect("two embeddings ran")))
    };
    match inner() {
        Ok((mut ck, norms, rep)) => {
            let ratio = norms[0] / norms[1];
            ck.ok(
                &format!("norm ratio {ratio:.2} in [5, 20]"),
                (5.0..=20.0).contains(&ratio),
            );
            (finish(2, name, t0, ck), Some(rep))
        }
        Err(e) => (failed(2, name, t0, e), None),
    }
}

/// Criterion 3: the averaging transfer operator and its resonant-site
/// inverse are exact mutual inverses on random inputs across all three
/// twist-rate cases, with the advertised norm bounds.
fn operator_identities() -> CriterionResult {
    let t0 = Instant::now();
    let name = "operator-identities";
    let mu = [GOLDEN];
    let h = 0.3;
    let inner = || -> Result<Check> {
        let mut ck = Check::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7_000);
        let mut max_rt = 0.0f64;
        let mut max_margin = 0.0f64;
        for i in 0..200u64 {
            let (lambda, rho) = match i % 3 {
                0 => {
                    let mag = rng.gen_range(0.05..0.5);
                    let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                    (sign * mag, rng.gen_range(-0.45..0.45))
                }
                1 => (0.0, rng.gen_range(-0.45..0.45)),
                _ => {
                    // Exact resonance: place the zero divisor on a populated
                    // mode so the verbatim-copy branch is exercised.
                    let ks = [-4i64, -2, -1, 1, 2, 3];
                    let k = ks[rng.gen_range(0..ks.len())];
                    let site = rng.gen_range(-3i64..=3);
                    (0.0, -(site as f64 + k as f64 * GOLDEN) / 2.0)
                }
            };
            let spec = InstanceSpec {
                modes: 4,
                amplitude: rng.gen_range(0.1..10.0),
                h,
                mu: mu.to_vec(),
            };
            let phi = gen_scalar(9_000 + i, &spec)?;
            let f = invert_t(lambda, rho, &mu, &phi)?;
            let back = apply_t(lambda, rho, &mu, &f.to_trig()?)?;
            let rt = back.sub(&phi)?.norm_h(0.0) / phi.norm_h(0.0);
            max_rt = max_rt.max(rt);
            // The site-supported norm at the compressed width carries the
            // same per-mode weight as the plain width-h input norm.
            let bound = inverse_factor_bound(lambda);
            let margin = f.weighted_norm(h / (1.0 + GOLDEN)) / (bound * phi.norm_h(h));
            max_margin = max_margin.max(margin);
        }
        ck.le("max round-trip relative error", max_rt, 1e-12);
        ck.le("max norm ratio vs case bound", max_margin, 1.0 + 1e-12);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(3, name, t0, ck),
        Err(e) => failed(3, name, t0, e),
    }
}

/// Criterion 4: the elliptic averaged-conjugation inverse, fed random fields
/// with the unit-disk-frame symmetry, is confirmed by direct quadrature of
/// the forward average and obeys its norm bound.
fn averaging_inverse_bound() -> CriterionResult {
    let t0 = Instant::now();
    let name = "averaging-inverse-bound";
    let mu = [GOLDEN];
    let inner = || -> Result<Check> {
        let mut ck = Check::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11_000);
        let mut max_quad = 0.0f64;
        let mut max_margin = 0.0f64;
        for i in 0..100u64 {
            let rho = rng.gen_range(0.0..0.45);
            let h = if i % 2 == 0 { 0.1 } else { 0.5 };
            let spec = InstanceSpec {
                modes: 3,
                amplitude: 1.0,
                h,
                mu: mu.to_vec(),
            };
            let g = gen_disk_field(13_000 + i, &spec)?;
            let inv = invert_l_elliptic(rho, &g, &mu, h)?;
            max_margin = max_margin.max(inv.norm_output / (inv.constant * inv.norm_input));
            let a = to_frame(&j_matrix().scale(TWO_PI * rho));
            for &theta in &[0.123, 0.654] {
                let avg = average_conjugated_quadrature(&a, &inv.f, &mu, &[theta], 60);
                let dev = avg.sub(&g.eval(&[theta])).norm_fro();
                max_quad = max_quad.max(dev);
            }
        }
        ck.le("max quadrature round-trip defect", max_quad, 1e-10);
        ck.le("max norm ratio vs constant", max_margin, 1.0 + 1e-12);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(4, name, t0, ck),
        Err(e) => failed(4, name, t0, e),
    }
}

/// Criterion 5: time-one maps of random near-constant elliptic systems stay
/// within twice the perturbation size of the unperturbed rotation.
fn near_constant_poincare(audit: &mut DetAudit) -> CriterionResult {
    let t0 = Instant::now();
    let name = "near-constant-poincare";
    let eps = 1e-3;
    let mut inner = || -> Result<Check> {
        let mut ck = Check::new();
        let mut rng = ChaCha8Rng::seed_from_u64(15_000);
        let mut max_dev = 0.0f64;
        for i in 0..50u64 {
            let mag = rng.gen_range(0.05..0.45);
            let rho = if rng.gen_bool(0.5) { mag } else { -mag };
            let spec = InstanceSpec {
                modes: 2,
                amplitude: eps,
                h: 0.3,
                mu: vec![1.0, GOLDEN],
            };
            let f = gen_perturbation(17_000 + i, &spec)?;
            let a = j_matrix().scale(TWO_PI * rho);
            let sys = QPSystem::new(vec![1.0, GOLDEN], a, f, 0.3)?;
            let ea_inv = a.scale(-1.0).exp_tracefree();
            for theta in probe_line(8) {
                let phi = sys.integrate(&[0.0, theta], 1.0, 1e-11)?;
                audit.note(&phi);
                let dev = ea_inv.mul(&phi).sub(&Mat2::IDENTITY).norm_fro();
                max_dev = max_dev.max(dev);
            }
        }
        ck.le("max time-one drift from rotation", max_dev, 2.0 * eps);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(5, name, t0, ck),
        Err(e) => failed(5, name, t0, e),
    }
}

/// The rotation-valued frame `x -> [[cos, -sin], [sin, cos]](2 pi <k, x>/p)`
/// as an exact two-mode series.
fn rotation_frame_modes(k: &[i32], periods: &[u8]) -> Result<MatSeries> {
    let half = num_complex::Complex64::new(0.5, 0.0);
    let ihalf = num_complex::Complex64::new(0.0, 0.5);
    let neg: Vec<i32> = k.iter().map(|x| -x).collect();
    let mut cos = TrigSeries::zero(periods)?;
    cos.insert(k.to_vec(), half)?;
    cos.insert(neg.clone(), half)?;
    cos.refresh_real_flag();
    let mut msin = TrigSeries::zero(periods)?;
    msin.insert(k.to_vec(), ihalf)?;
    msin.insert(neg, -ihalf)?;
    msin.refresh_real_flag();
    let sin = msin.scale(num_complex::Complex64::new(-1.0, 0.0));
    MatSeries::from_entries([[cos.clone(), msin], [sin, cos]], MatTag::Sl2RValued)
}

/// One-axis rotation frame of winding `k` on a torus of period `p`.
fn rotation_frame(k: i32, period: u8) -> Result<MatSeries> {
    rotation_frame_modes(&[k], &[period])
}

/// Criterion 6: conjugating a cocycle by a winding frame shifts its rotation
/// number by the base frequency (whole-period frame) or half the base
/// frequency (half-period frame), modulo one.
fn rotation_conjugacy_shift() -> CriterionResult {
    let t0 = Instant::now();
    let name = "rotation-conjugacy-shift";
    let n = 100_000u64;
    let inner = || -> Result<Check> {
        let mut ck = Check::new();
        let spec = InstanceSpec {
            modes: 2,
            amplitude: 1e-2,
            h: 0.2,
            mu: vec![GOLDEN],
        };
        let g = gen_perturbation(19_000, &spec)?;
        let a = j_matrix().scale(TWO_PI * 0.31);
        let base = Cocycle::new(vec![GOLDEN], Fiber::ExpPair { a, g }, vec![0])?;
        let r0 = base.rotation_number(&[0.3], [1.0, 0.0], n)?.value;
        let circ = |a: f64, b: f64| {
            let d = (a - b).rem_euclid(1.0);
            d.min(1.0 - d)
        };

        let whole = Conjugacy::new(rotation_frame(1, 1)?, vec![1])?;
        let shifted = base.conjugate(&whole, Some(&[24]))?;
        let r1 = shifted.rotation_number(&[0.3], [1.0, 0.0], n)?.value;
        ck.le(
            "whole-period shift error",
            circ(r1, r0 + GOLDEN),
            1e-4,
        );

        let half = Conjugacy::new(rotation_frame(1, 2)?, vec![1])?;
        let shifted2 = base.conjugate(&half, Some(&[48]))?;
        let r2 = shifted2.rotation_number(&[0.3], [1.0, 0.0], n)?.value;
        ck.le(
            "half-period shift error",
            circ(r2, r0 + 0.5 * GOLDEN),
            1e-4,
        );
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(6, name, t0, ck),
        Err(e) => failed(6, name, t0, e),
    }
}

/// Criterion 7: the golden-ratio expansion reproduces the Fibonacci
/// denominators exactly to depth 30, and every denominator obeys the
/// best-approximation inequality against the next one.
fn continued_fractions() -> CriterionResult {
    let t0 = Instant::now();
    let name = "continued-fractions";
    let inner = || -> Result<Check> {
        let mut ck = Check::new();
        let cf = ContinuedFraction::expand(&Alpha::golden(), 30)?;
        let mut fib_ok = true;
        let mut a = num_bigint::BigInt::from(1);
        let mut b = num_bigint::BigInt::from(0);
        for q in &cf.q {
            fib_ok &= *q == a;
            let next = &a + &b;
            b = a;
            a = next;
        }
        ck.ok(
            &format!("denominators are Fibonacci to depth {}", cf.depth()),
            fib_ok && cf.depth() == 30,
        );
        let one = num_rational::BigRational::from_integer(1.into());
        let mut ineq_ok = true;
        for n in 0..cf.depth() {
            let dist = cf.qn_alpha_dist(n);
            let bound = &one / num_rational::BigRational::from_integer(cf.q[n + 1].clone());
            ineq_ok &= dist <= bound;
        }
        ck.ok("every |q_n alpha| within 1/q_{n+1}", ineq_ok);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(7, name, t0, ck),
        Err(e) => failed(7, name, t0, e),
    }
}

/// Criterion 8: aggregate determinant audit over every integration the
/// suite performed, plus the two-parameter flow composition law on random
/// probe triples of an embedded system.
fn flow_structure(audit: &mut DetAudit, sys: Option<&QPSystem>) -> CriterionResult {
    let t0 = Instant::now();
    let name = "flow-structure";
    let tol = 1e-10;
    let mut inner = || -> Result<Check> {
        let mut ck = Check::new();
        let fallback;
        let sys = match sys {
            Some(s) => s,
            None => {
                let spec = InstanceSpec {
                    modes: 2,
                    amplitude: 1e-3,
                    h: 0.3,
                    mu: vec![1.0, GOLDEN],
                };
                let f = gen_perturbation(21_000, &spec)?;
                fallback = QPSystem::new(
                    vec![1.0, GOLDEN],
                    j_matrix().scale(TWO_PI * 0.2),
                    f,
                    0.3,
                )?;
                &fallback
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(23_000);
        let mut max_res = 0.0f64;
        for _ in 0..8 {
            let t = rng.gen_range(-2.0..2.0);
            let s = rng.gen_range(-2.0..2.0);
            let x: Vec<f64> = (0..sys.dim()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let whole = sys.integrate(&x, t + s, tol)?;
            let first = sys.integrate(&x, s, tol)?;
            let xs: Vec<f64> = x.iter().zip(&sys.mu).map(|(v, m)| v + s * m).collect();
            let second = sys.integrate(&xs, t, tol)?;
            for m in [&whole, &first, &second] {
                audit.note(m);
            }
            let res = second.mul(&first).sub(&whole).norm_fro();
            max_res = max_res.max(res);
        }
        ck.le("max composition residual", max_res, 10.0 * tol);
        ck.le("max |det - 1| across suite", audit.max_dev, 1e-12);
        ck.info("integrations audited", audit.integrations as f64);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(8, name, t0, ck),
        Err(e) => failed(8, name, t0, e),
    }
}

/// Circular distance modulo one half.
fn dist_half(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(0.5);
    d.min(0.5 - d)
}

/// Criterion 9: the zero-potential rotation number matches its arccosine
/// closed form, and the rotation plateaus of a subcritical cosine-potential
/// scan sit on the half-integer-combination labels of the base frequency.
fn spectral_diagnostics() -> CriterionResult {
    let t0 = Instant::now();
    let name = "spectral-diagnostics";
    let inner = || -> Result<Check> {
        let mut ck = Check::new();
        let zero_v = TrigSeries::zero(&[1])?;
        let mut max_free = 0.0f64;
        for i in 0..39 {
            let e = -1.9 + 0.1 * i as f64;
            let c = schrodinger_cocycle(&zero_v, e, &[GOLDEN])?;
            let r = c.rotation_number(&[0.0], [1.0, 0.0], 200_000)?.value;
            let want = (-e / 2.0).acos() / TWO_PI;
            let d = (r - want).rem_euclid(1.0);
            max_free = max_free.max(d.min(1.0 - d));
        }
        ck.le("max free-field rotation error", max_free, 1e-4);

        // Cosine potential with coupling 0.25 (two modes of weight 0.25).
        let mut v = TrigSeries::zero(&[1])?;
        v.insert(vec![1], 0.25.into())?;
        v.insert(vec![-1], 0.25.into())?;
        v.refresh_real_flag();
        let energies: Vec<f64> = (0..801).map(|i| -4.0 + 8.0 * i as f64 / 800.0).collect();
        let rows = scan_energy(&v, &[GOLDEN], &energies, 40_000, 1_000)?;
        ck.ok(
            "rotation nondecreasing across scan",
            rows.iter().all(|r| r.monotone_ok),
        );

        // Plateaus: runs of at least four energies whose rotation stays
        // within 5e-5 of the run's anchor, modulo one half. Rows whose own
        // error band exceeds the run tolerance carry no usable reading (far
        // above the spectrum every step turns by almost exactly a half turn,
        // which saturates the branch-cut counter), so they cannot anchor or
        // extend a run. The reported level is the run's median (edge rows of
        // a gap converge slowest).
        const ERR_CAP: f64 = 1e-4;
        let mut plateaus: Vec<(f64, usize)> = Vec::new();
        let mut i = 0usize;
        while i < rows.len() {
            if rows[i].rot_err > ERR_CAP {
                i += 1;
                continue;
            }
            let mut j = i;
            while j + 1 < rows.len()
                && rows[j + 1].rot_err <= ERR_CAP
                && dist_half(rows[j + 1].rot, rows[i].rot) < 5e-5
            {
                j += 1;
            }
            if j - i + 1 >= 4 {
                let anchor = rows[i].rot;
                let mut vals: Vec<f64> = rows[i..=j]
                    .iter()
                    .map(|r| {
                        let mut d = (r.rot - anchor).rem_euclid(0.5);
                        if d > 0.25 {
                            d -= 0.5;
                        }
                        anchor + d
                    })
                    .collect();
                vals.sort_by(|a, b| a.total_cmp(b));
                plateaus.push((vals[vals.len() / 2], j - i + 1));
            }
            i = j + 1;
        }
        let mut worst = 0.0f64;
        for &(level, _) in &plateaus {
            let best = (-20..=20)
                .map(|k| dist_half(level, k as f64 * GOLDEN * 0.5))
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
        ck.ok(
            &format!("found {} plateaus", plateaus.len()),
            plateaus.len() >= 3,
        );
        ck.le("max plateau-label distance", worst, 1e-3);
        ck.le("wall seconds", t0.elapsed().as_secs_f64(), 300.0);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(9, name, t0, ck),
        Err(e) => failed(9, name, t0, e),
    }
}

/// Criterion 10: extending a section conjugacy to the flow satisfies the
/// flow composition law and the intertwining identity, and the lifted
/// conjugacy built from time-one data is 2-periodic along the flow axis.
fn conjugacy_extension(audit: &mut DetAudit) -> CriterionResult {
    let t0 = Instant::now();
    let name = "conjugacy-extension";
    let tol = 1e-10;
    let bound = 10.0 * tol;
    let mut inner = || -> Result<Check> {
        let mut ck = Check::new();
        let spec = InstanceSpec {
            modes: 2,
            amplitude: 1e-3,
            h: 0.3,
            mu: vec![1.0, GOLDEN],
        };
        let f = gen_perturbation(25_000, &spec)?;
        let a = j_matrix().scale(TWO_PI * 0.2);
        let sys = QPSystem::new(vec![1.0, GOLDEN], a, f, 0.3)?;

        let frame = rotation_frame(1, 1)?;
        let ext = extend_conjugacy_to_flow(&frame, &sys, tol)?;
        let mut rng = ChaCha8Rng::seed_from_u64(27_000);
        let mut max_flow = 0.0f64;
        let mut max_twine = 0.0f64;
        for _ in 0..6 {
            let t = rng.gen_range(-1.5..1.5);
            let s = rng.gen_range(-1.5..1.5);
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let whole = ext.eval(t + s, &x)?;
            let first = ext.eval(s, &x)?;
            let xs = [x[0] + s, x[1] + s * GOLDEN];
            let second = ext.eval(t, &xs)?;
            for m in [&whole, &first, &second] {
                audit.note(m);
            }
            max_flow = max_flow.max(second.mul(&first).sub(&whole).norm_fro());

            let phi = sys.integrate(&x, t, tol)?;
            audit.note(&phi);
            let bt = frame.eval_real(&[x[1] + t * GOLDEN]);
            let b0 = frame.eval_real(&[x[1]]);
            let lhs = bt.mul(&ext.eval(t, &x)?);
            let rhs = phi.mul(&b0);
            max_twine = max_twine.max(lhs.sub(&rhs).norm_fro());
        }
        ck.le("max flow-composition residual", max_flow, bound);
        ck.le("max intertwining residual", max_twine, bound);

        // A rotating-frame section conjugacy between the system and its
        // closed-form conjugated copy (generator R^{-1}(A+F)R + 2 pi mu J,
        // absorbing the frame's own drift) lifts to the flow; the lift must
        // be 2-periodic along the flow axis with the base point held fixed,
        // and must collapse to the frame itself.
        let r_full = rotation_frame_modes(&[0, 1], &[1, 1])?;
        let rinv_full = rotation_frame_modes(&[0, -1], &[1, 1])?;
        let a_series = MatSeries::from_constant(&[1, 1], &sys.a, MatTag::Sl2R)?;
        let twisted = rinv_full.matmul(&sys.f.add(&a_series)?)?.matmul(&r_full)?;
        let drift = MatSeries::from_constant(&[1, 1], &j_matrix().scale(TWO_PI * GOLDEN), MatTag::Sl2R)?;
        let sys_bar = QPSystem::new(sys.mu.clone(), Mat2::ZERO, twisted.add(&drift)?, sys.h)?;
        let r_sec = rotation_frame(1, 1)?;
        let lift = lift_conjugacy_to_flow(&r_sec, &sys, &sys_bar, tol)?;
        let mut max_per = 0.0f64;
        let mut max_frame = 0.0f64;
        for _ in 0..5 {
            let x = [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)];
            let here = lift.eval(&x)?;
            let there = lift.eval(&[x[0] + 2.0, x[1]])?;
            for m in [&here, &there] {
                audit.note_dev((m.det() - 1.0).abs(), 1);
            }
            max_per = max_per.max(there.sub(&here).norm_fro());
            max_frame = max_frame.max(here.sub(&r_sec.eval_real(&[x[1]])).norm_fro());
        }
        ck.le("max 2-periodicity residual", max_per, bound);
        ck.le("max lift-vs-frame residual", max_frame, bound);
        Ok(ck)
    };
    match inner() {
        Ok(ck) => finish(10, name, t0, ck),
        Err(e) => failed(10, name, t0, e),
    }
}

/// Run the full acceptance suite in canonical order.
///
/// Criterion 8 aggregates the determinant audit, so every other criterion
/// that integrates flows executes first; results are reported in order 1-10
/// regardless.
pub fn run_all() -> Vec<CriterionResult> {
    let mut audit = DetAudit::default();
    let (r1, rep1) = elliptic_round_trip(&mut audit);
    let (r2, _rep2) = parabolic_scaling(&mut audit);
    let r3 = operator_identities();
    let r4 = averaging_inverse_bound();
    let r5 = near_constant_poincare(&mut audit);
    let r6 = rotation_conjugacy_shift();
    let r7 = continued_fractions();
    let r9 = spectral_diagnostics();
    let r10 = conjugacy_extension(&mut audit);
    let sys1 = rep1.as_ref().and_then(|r| r.system().ok());
    let r8 = flow_structure(&mut audit, sys1.as_ref());
    vec![r1, r2, r3, r4, r5, r6, r7, r8, r9, r10]
}
