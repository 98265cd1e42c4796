//! Continued fractions, convergents, Liouville-exponent estimation and
//! Diophantine condition checks for irrational frequencies.
//!
//! The expansion runs on exact rational arithmetic. An input is either an
//! exact rational (decimal strings, `f64` bit patterns) or a high-precision
//! rational surrogate for a named irrational constant carrying a *trust
//! budget* in decimal digits. Partial quotients of the surrogate agree with
//! those of the true constant as long as the convergent denominators stay
//! well inside the budget; the expansion is capped (and flagged) once the
//! residual would have lost half of its trusted digits.

use num_bigint::{BigInt, Sign};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::{Error, Result};

/// Decimal digits carried by the built-in irrational constants.
const CONST_DIGITS: u32 = 160;

/// A frequency value in (0, 1): an exact rational together with how many
/// leading decimal digits of it are trusted (`None` = the rational itself is
/// the exact input).
#[derive(Debug, Clone)]
pub struct Alpha {
    value: BigRational,
    trust_digits: Option<u32>,
}

fn pow10(digits: u32) -> BigInt {
    BigInt::from(10u32).pow(digits)
}

impl Alpha {
    /// Golden-ratio frequency (sqrt(5) - 1) / 2.
    pub fn golden() -> Alpha {
        let m = CONST_DIGITS;
        let s = (BigInt::from(5u32) * pow10(2 * m)).sqrt();
        Alpha {
            value: BigRational::new(s - pow10(m), 2 * pow10(m)),
            trust_digits: Some(m - 2),
        }
    }

    /// sqrt(2) - 1, whose partial quotients are all 2.
    pub fn sqrt2_minus_1() -> Alpha {
        let m = CONST_DIGITS;
        let s = (BigInt::from(2u32) * pow10(2 * m)).sqrt();
        Alpha {
            value: BigRational::new(s - pow10(m), pow10(m)),
            trust_digits: Some(m - 2),
        }
    }

    /// Exact decimal string such as `"0.3"`; the value is the rational the
    /// digits denote, trusted exactly.
    pub fn from_decimal_str(s: &str) -> Result<Alpha> {
        let s = s.trim();
        let (int_part, frac_part) = match s.split_once('.') {
            Some((i, f)) => (i, f),
            None => (s, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(Error::InvalidArgument(format!("empty decimal: {s:?}")));
        }
        let digits: String = format!(
            "{}{}",
            if int_part.is_empty() { "0" } else { int_part },
            frac_part
        );
        let num: BigInt = digits
            .parse()
            .map_err(|_| Error::InvalidArgument(format!("not a decimal number: {s:?}")))?;
        let den = pow10(frac_part.len() as u32);
        Alpha::from_rational(BigRational::new(num, den))
    }

    /// Treat an `f64` as the exact binary rational it encodes.
    pub fn from_f64(x: f64) -> Result<Alpha> {
        if !x.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite alpha {x}")));
        }
        let r = BigRational::from_float(x)
            .ok_or_else(|| Error::InvalidArgument(format!("cannot represent {x}")))?;
        Alpha::from_rational(r)
    }

    /// Exact rational input.
    pub fn from_rational(value: BigRational) -> Result<Alpha> {
        if value <= BigRational::zero() || value >= BigRational::one() {
            return Err(Error::InvalidArgument(format!(
                "alpha must lie strictly inside (0, 1), got approximately {}",
                value.to_f64().unwrap_or(f64::NAN)
            )));
        }
        Ok(Alpha {
            value,
            trust_digits: None,
        })
    }

    /// Parse a CLI-style value: a named constant or a decimal string.
    pub fn parse(s: &str) -> Result<Alpha> {
        match s.trim() {
            "golden" => Ok(Alpha::golden()),
            "sqrt2m1" => Ok(Alpha::sqrt2_minus_1()),
            other => Alpha::from_decimal_str(other),
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.value.to_f64().unwrap_or(f64::NAN)
    }

    pub fn value(&self) -> &BigRational {
        &self.value
    }
}

/// Why an expansion stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// Produced exactly the requested number of partial quotients.
    RequestedDepth,
    /// The value is rational at working precision; expansion is exact and
    /// complete (truncation flag).
    RationalExact,
    /// The precision budget ran out: deeper quotients would not be trusted.
    PrecisionCapped,
}

/// Continued fraction `[0; a_1, a_2, ...]` of a number in (0, 1) with its
/// convergents `p_k / q_k` (seeds `p_0 = 0, p_1 = 1, q_0 = 1, q_1 = a_1`).
#[derive(Debug, Clone)]
pub struct ContinuedFraction {
    /// The exact rational that was expanded.
    pub alpha: BigRational,
    /// Partial quotients `a_1 ..= a_n` (index 0 holds `a_1`).
    pub a: Vec<BigInt>,
    /// Convergent numerators `p_0 ..= p_n`.
    pub p: Vec<BigInt>,
    /// Convergent denominators `q_0 ..= q_n`.
    pub q: Vec<BigInt>,
    /// How the expansion ended.
    pub termination: Termination,
}

/// Natural log of a positive big integer, accurate to ~1e-15 relative.
pub fn ln_big(x: &BigInt) -> f64 {
    assert!(x.sign() == Sign::Plus, "ln of non-positive integer");
    let bits = x.bits();
    if bits <= 53 {
        return x.to_f64().unwrap().ln();
    }
    let shift = bits - 53;
    let top: BigInt = x >> shift;
    top.to_f64().unwrap().ln() + shift as f64 * std::f64::consts::LN_2
}

impl ContinuedFraction {
    /// Expand `alpha` to at most `depth` partial quotients.
    ///
    /// Stops early (with the corresponding flag, never silently) when the
    /// value is rational at working precision or when the trust budget is
    /// exhausted: once `q_k` exceeds `10^(trust/4)` the Gauss-map residual
    /// has lost half of its trusted digits.
    pub fn expand(alpha: &Alpha, depth: usize) -> Result<ContinuedFraction> {
        if depth == 0 {
            return Err(Error::InvalidArgument("depth must be at least 1".into()));
        }
        let mut a = Vec::with_capacity(depth);
        let mut p = vec![BigInt::zero(), BigInt::one()];
        let mut q = vec![BigInt::one()];

        // Gauss map on exact rationals: x = n/d in (0,1), a = floor(d/n),
        // next x = (d mod n)/n.
        let mut n = alpha.value.numer().clone();
        let mut d = alpha.value.denom().clone();
        let q_cap = alpha
            .trust_digits
            .map(|t| pow10((t / 4).max(1)));

        let mut termination = Termination::RequestedDepth;
        while a.len() < depth {
            let quot = &d / &n;
            let rem = &d % &n;
            let k = a.len() + 1; // index of the quotient being produced
            a.push(quot.clone());
            if k == 1 {
                q.push(quot.clone());
            } else {
                let pk = &quot * &p[k - 1] + &p[k - 2];
                let qk = &quot * &q[k - 1] + &q[k - 2];
                p.push(pk);
                q.push(qk);
            }
            if let Some(cap) = &q_cap {
                if &q[k] > cap {
                    // This quotient itself is still trusted (the residual that
                    // produced it was), but deeper ones would not be.
                    if a.len() < depth {
                        termination = Termination::PrecisionCapped;
                    }
                    break;
                }
            }
            if rem.is_zero() {
                // Zero residual: the expansion is exact and complete, even if
                // that happened to coincide with the requested depth.
                termination = Termination::RationalExact;
                break;
            }
            d = n;
            n = rem;
        }
        Ok(ContinuedFraction {
            alpha: alpha.value.clone(),
            a,
            p,
            q,
            termination,
        })
    }

    /// Build the expansion directly from prescribed partial quotients
    /// (all >= 1); `alpha` becomes the final convergent.
    pub fn from_quotients(quotients: &[BigInt]) -> Result<ContinuedFraction> {
        if quotients.is_empty() {
            return Err(Error::InvalidArgument("need at least one quotient".into()));
        }
        if quotients.iter().any(|x| x < &BigInt::one()) {
            return Err(Error::InvalidArgument(
                "partial quotients must be >= 1".into(),
            ));
        }
        let mut p = vec![BigInt::zero(), BigInt::one()];
        let mut q = vec![BigInt::one(), quotients[0].clone()];
        for (i, ak) in quotients.iter().enumerate().skip(1) {
            let k = i + 1;
            p.push(ak * &p[k - 1] + &p[k - 2]);
            q.push(ak * &q[k - 1] + &q[k - 2]);
        }
        let n = quotients.len();
        Ok(ContinuedFraction {
            alpha: BigRational::new(p[n].clone(), q[n].clone()),
            a: quotients.to_vec(),
            p,
            q,
            termination: Termination::RationalExact,
        })
    }

    /// Number of partial quotients produced.
    pub fn depth(&self) -> usize {
        self.a.len()
    }

    /// Exact distance from `q_n * alpha` to its nearest integer (which is
    /// the convergent numerator `p_n`).
    pub fn qn_alpha_dist(&self, n: usize) -> BigRational {
        (BigRational::from(self.q[n].clone()) * &self.alpha
            - BigRational::from(self.p[n].clone()))
        .abs()
    }

    /// Convergent `p_n / q_n` as an exact rational.
    pub fn convergent(&self, n: usize) -> BigRational {
        BigRational::new(self.p[n].clone(), self.q[n].clone())
    }
}

/// Liouville-exponent estimate from the growth of convergent denominators.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BetaEstimate {
    /// `ln(q_(n+1)) / q_n` for `n = 1 ..` (one entry per available pair).
    pub samples: Vec<f64>,
    /// Supremum over the tail starting at `tail_start` (the headline value;
    /// the limsup is a tail quantity, so early samples are discarded).
    pub beta_hat: f64,
    /// Supremum over all samples, for comparison.
    pub sup_full: f64,
    /// First sample index (into `samples`) included in the tail.
    pub tail_start: usize,
    /// Depth of the expansion the samples came from.
    pub depth: usize,
}

/// Estimate how Liouville a frequency is: samples `ln(q_(n+1))/q_n` and the
/// supremum over the tail `n >= depth/2`.
pub fn beta_estimate(cf: &ContinuedFraction) -> Result<BetaEstimate> {
    if cf.depth() < 2 {
        return Err(Error::InvalidArgument(
            "beta estimate needs an expansion of depth >= 2".into(),
        ));
    }
    let n_max = cf.depth(); // q indices 0..=n_max available
    let samples: Vec<f64> = (1..n_max)
        .map(|n| ln_big(&cf.q[n + 1]) / cf.q[n].to_f64().unwrap_or(f64::INFINITY))
        .collect();
    let tail_start = (cf.depth() / 2).saturating_sub(1).min(samples.len() - 1);
    let sup = |xs: &[f64]| xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(BetaEstimate {
        beta_hat: sup(&samples[tail_start..]),
        sup_full: sup(&samples),
        tail_start,
        depth: cf.depth(),
        samples,
    })
}

/// Distance from `x` to the nearest integer.
pub fn dist_to_integer(x: f64) -> f64 {
    (x - x.round()).abs()
}

/// Outcome of a finite Diophantine scan.
#[derive(Debug, Clone, serde::Serialize)]
pub struct DiophantineReport {
    /// Whether `dist(k*alpha - 2*rho, Z) >= gamma / |k|^tau` held for every
    /// `0 < |k| <= k_max`.
    pub passes: bool,
    /// The `k` with the smallest margin `dist * |k|^tau / gamma`.
    pub worst_k: i64,
    /// Distance to the nearest integer at `worst_k`.
    pub worst_dist: f64,
    /// Required lower bound at `worst_k`.
    pub worst_bound: f64,
}

/// Check the finite-range Diophantine condition
/// `dist(k*alpha - 2*rho, Z) >= gamma/|k|^tau` for `0 < |k| <= k_max`.
pub fn diophantine_check(
    alpha: f64,
    gamma: f64,
    tau: f64,
    rho: f64,
    k_max: u64,
) -> Result<DiophantineReport> {
    if !(gamma > 0.0) || !(tau > 0.0) || k_max == 0 {
        return Err(Error::InvalidArgument(
            "need gamma > 0, tau > 0, k_max >= 1".into(),
        ));
    }
    let mut worst = (f64::INFINITY, 0i64, 0.0, 0.0);
    let mut passes = true;
    for k in 1..=k_max as i64 {
        for sk in [k, -k] {
            let dist = dist_to_integer(sk as f64 * alpha - 2.0 * rho);
            let bound = gamma / (k as f64).powf(tau);
            let margin = dist / bound;
            if margin < worst.0 {
                worst = (margin, sk, dist, bound);
            }
            if dist < bound {
                passes = false;
            }
        }
    }
    Ok(DiophantineReport {
        passes,
        worst_k: worst.1,
        worst_dist: worst.2,
        worst_bound: worst.3,
    })
}

/// Denominators of the convergents of `frac(|mu|)`, capped at `max_q`; used
/// to sample Birkhoff-type averages at the times where they converge
/// fastest. Returns an empty list when `mu` is (nearly) rational.
pub fn convergent_denominators(mu: f64, max_q: u64) -> Vec<u64> {
    let frac = mu.abs().fract();
    if frac < 1e-12 || frac > 1.0 - 1e-12 {
        return Vec::new();
    }
    let alpha = match Alpha::from_f64(frac) {
        Ok(a) => a,
        Err(_) => return Vec::new(),
    };
    let cf = match ContinuedFraction::expand(&alpha, 64) {
        Ok(c) => c,
        Err(_) => return Vec::new(),
    };
    let mut out = Vec::new();
    for qk in cf.q.iter().skip(1) {
        match qk.to_u64() {
            Some(v) if v <= max_q => {
                if out.last() != Some(&v) && v >= 2 {
                    out.push(v);
                }
            }
            _ => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_mean_gives_all_ones_and_fibonacci_denominators() {
        let cf = ContinuedFraction::expand(&Alpha::golden(), 10).unwrap();
        assert_eq!(cf.depth(), 10);
        assert!(cf.a.iter().all(|x| *x == BigInt::one()));
        let fib: Vec<u64> = vec![1, 1, 2, 3, 5, 8, 13, 21, 34, 55, 89];
        let got: Vec<u64> = cf.q.iter().map(|x| x.to_u64().unwrap()).collect();
        assert_eq!(got, fib);
        assert_eq!(cf.termination, Termination::RequestedDepth);
    }

    #[test]
    fn sqrt2_minus_1_gives_all_twos() {
        let cf = ContinuedFraction::expand(&Alpha::sqrt2_minus_1(), 12).unwrap();
        assert!(cf.a.iter().all(|x| *x == BigInt::from(2u32)));
    }

    #[test]
    fn rational_input_terminates_exactly_with_flag() {
        let cf =
            ContinuedFraction::expand(&Alpha::from_decimal_str("0.3").unwrap(), 3).unwrap();
        // 3/10 = [0; 3, 3]
        assert_eq!(cf.a, vec![BigInt::from(3u32), BigInt::from(3u32)]);
        assert_eq!(cf.termination, Termination::RationalExact);
        assert_eq!(cf.convergent(2), BigRational::new(3.into(), 10.into()));
    }

    #[test]
    fn precision_budget_caps_depth_with_flag() {
        // Golden constant carries ~158 trusted digits; quotients stay valid
        // until q_k ~ 10^39, i.e. depth ~ 190. Requesting more must cap.
        let cf = ContinuedFraction::expand(&Alpha::golden(), 400).unwrap();
        assert_eq!(cf.termination, Termination::PrecisionCapped);
        assert!(cf.depth() > 150 && cf.depth() < 400, "depth {}", cf.depth());
        // Everything produced is still the true expansion.
        assert!(cf.a.iter().all(|x| *x == BigInt::one()));
    }

    #[test]
    fn convergent_identity_and_reconstruction_error() {
        let cf = ContinuedFraction::expand(&Alpha::golden(), 25).unwrap();
        // p_k q_{k-1} - p_{k-1} q_k alternates sign with magnitude 1.
        for k in 1..=cf.depth() {
            let det = &cf.p[k] * &cf.q[k - 1] - &cf.p[k - 1] * &cf.q[k];
            assert_eq!(det.abs(), BigInt::one(), "k = {k}");
        }
        // |alpha - p_n/q_n| <= 1/q_n^2, exactly in rational arithmetic.
        for n in 1..=cf.depth() {
            let err = (&cf.alpha - cf.convergent(n)).abs();
            let bound = BigRational::new(BigInt::one(), (&cf.q[n] * &cf.q[n]).clone());
            assert!(err <= bound, "n = {n}");
        }
    }

    #[test]
    fn convergents_are_best_approximations() {
        // For all 1 <= k < q_n: dist(k alpha) >= dist(q_{n-1} alpha).
        let cf = ContinuedFraction::expand(&Alpha::golden(), 19).unwrap();
        let n = cf.depth();
        let qn = cf.q[n].to_u64().unwrap();
        assert!(qn <= 10_000, "test budget: q_n = {qn}");
        let alpha = cf.alpha.to_f64().unwrap();
        let ref_dist = cf.qn_alpha_dist(n - 1).to_f64().unwrap();
        for k in 1..qn {
            assert!(
                dist_to_integer(k as f64 * alpha) >= ref_dist - 1e-12,
                "k = {k}"
            );
        }
    }

    #[test]
    fn qn_alpha_distance_bounded_by_next_denominator() {
        let cf = ContinuedFraction::expand(&Alpha::sqrt2_minus_1(), 20).unwrap();
        for n in 1..cf.depth() {
            let lhs = cf.qn_alpha_dist(n);
            let rhs = BigRational::new(BigInt::one(), cf.q[n + 1].clone());
            assert!(lhs <= rhs, "n = {n}");
        }
    }

    #[test]
    fn beta_of_golden_tends_to_zero() {
        let cf20 = ContinuedFraction::expand(&Alpha::golden(), 20).unwrap();
        let cf40 = ContinuedFraction::expand(&Alpha::golden(), 40).unwrap();
        let b20 = beta_estimate(&cf20).unwrap();
        let b40 = beta_estimate(&cf40).unwrap();
        assert!(b20.beta_hat > 0.0);
        assert!(b40.beta_hat < b20.beta_hat / 10.0);
        assert!(b40.beta_hat < 1e-3);
        assert!(b20.sup_full >= b20.beta_hat);
    }

    #[test]
    fn beta_tail_supremum_is_monotone_in_tail_start() {
        let cf = ContinuedFraction::expand(&Alpha::golden(), 30).unwrap();
        let b = beta_estimate(&cf).unwrap();
        for start in b.tail_start..b.samples.len() {
            let sup_later = b.samples[start..]
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            assert!(sup_later <= b.beta_hat + 1e-15);
        }
    }

    /// Oracle for a strongly Liouville frequency: prescribe quotients
    /// a_{n+1} ~ e^{q_n}/q_n so that ln(q_{n+1}) ~ q_n, i.e. beta ~ 1.
    /// Quotients are built in floating point (the expansion only needs any
    /// integer within a hair of e^{q_n}/q_n; a relative error of 1e-10 moves
    /// the samples by far less than the 10% assertion band).
    #[test]
    fn beta_of_prescribed_liouville_sequence_is_one_within_ten_percent() {
        let mut quotients = vec![BigInt::one()];
        let mut q_prev = BigInt::one(); // q_0
        let mut q_cur = BigInt::one(); // q_1 = a_1 = 1
        for _ in 0..3 {
            let qf = q_cur.to_f64().unwrap();
            let a_next = (qf.exp() / qf).ceil();
            assert!(a_next.is_finite());
            let a_big = BigInt::from(a_next as u128);
            let q_next = &a_big * &q_cur + &q_prev;
            quotients.push(a_big);
            q_prev = q_cur;
            q_cur = q_next;
        }
        let cf = ContinuedFraction::from_quotients(&quotients).unwrap();
        let beta = beta_estimate(&cf).unwrap();
        assert!(
            (beta.beta_hat - 1.0).abs() < 0.1,
            "beta_hat = {}",
            beta.beta_hat
        );
    }

    #[test]
    fn diophantine_check_passes_for_golden_and_fails_on_resonance() {
        let alpha = Alpha::golden().to_f64();
        // Golden mean is badly approximable: gamma can be sizable at tau = 2.
        let ok = diophantine_check(alpha, 0.1, 2.0, 0.0, 1000).unwrap();
        assert!(ok.passes, "worst k {} dist {}", ok.worst_k, ok.worst_dist);
        // rho = alpha/2 makes k = 1 exactly resonant.
        let bad = diophantine_check(alpha, 0.1, 2.0, alpha / 2.0, 10).unwrap();
        assert!(!bad.passes);
        assert_eq!(bad.worst_k, 1);
        assert!(bad.worst_dist < 1e-12);
    }

    #[test]
    fn convergent_denominators_for_golden_are_fibonacci() {
        let qs = convergent_denominators(Alpha::golden().to_f64(), 100);
        assert_eq!(qs, vec![2, 3, 5, 8, 13, 21, 34, 55, 89]);
        assert!(convergent_denominators(0.5, 100).len() <= 1);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        assert!(Alpha::from_f64(1.5).is_err());
        assert!(Alpha::from_f64(0.0).is_err());
        assert!(ContinuedFraction::expand(&Alpha::golden(), 0).is_err());
        assert!(diophantine_check(0.5, -1.0, 2.0, 0.0, 5).is_err());
    }
}
