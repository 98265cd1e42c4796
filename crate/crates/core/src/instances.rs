//! Deterministic random-instance generation.
//!
//! Every generator here is a pure function of a 64-bit seed and a small
//! parameter record, built on a counter-based stream cipher RNG, so the same
//! inputs reproduce the same object bit for bit on every platform and run.
//! The generators feed the command-line `gen-instance` tool, the acceptance
//! suite, and any test that needs "a random perturbation of prescribed size".

use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fourier::{MatSeries, MatTag, TrigSeries};
use crate::{Error, Result};

/// Parameters of a random near-constant perturbation field.
///
/// The field lives on the torus carrying the driving frequencies `mu` (one
/// axis per frequency, all with period one) and has Fourier modes supported
/// in the box `{-modes, ..., modes}^dim` minus the origin. After generation
/// the field is rescaled so its analytic norm at width `h` equals
/// `amplitude` exactly (to roundoff).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSpec {
    /// Per-axis Fourier cutoff; modes range over `{-modes..=modes}^dim \ {0}`.
    pub modes: i32,
    /// Target analytic norm of the generated field at width `h`.
    pub amplitude: f64,
    /// Analytic width at which `amplitude` is measured.
    pub h: f64,
    /// Driving frequencies; their count fixes the torus dimension.
    pub mu: Vec<f64>,
}

impl InstanceSpec {
    fn validate(&self) -> Result<()> {
        if self.modes < 1 {
            return Err(Error::InvalidArgument(format!(
                "instance needs at least one mode, got {}",
                self.modes
            )));
        }
        if !(self.amplitude > 0.0) || !self.amplitude.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "instance amplitude must be positive and finite, got {}",
                self.amplitude
            )));
        }
        if !(self.h >= 0.0) || !self.h.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "instance width must be nonnegative and finite, got {}",
                self.h
            )));
        }
        if self.mu.is_empty() {
            return Err(Error::InvalidArgument(
                "instance needs at least one driving frequency".into(),
            ));
        }
        if self.mu.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidArgument(
                "driving frequencies must be finite".into(),
            ));
        }
        Ok(())
    }

    fn periods(&self) -> Vec<u8> {
        vec![1; self.mu.len()]
    }
}

/// Enumerate the lexicographically positive half of the mode box
/// `{-n..=n}^dim \ {0}` in sorted order (first nonzero entry positive).
fn half_box(n: i32, dim: usize) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let mut k = vec![-n; dim];
    loop {
        if k.iter().copied().find(|&x| x != 0).is_some_and(|x| x > 0) {
            out.push(k.clone());
        }
        let mut axis = dim;
        while axis > 0 {
            axis -= 1;
            if k[axis] < n {
                k[axis] += 1;
                for e in &mut k[axis + 1..] {
                    *e = -n;
                }
                break;
            }
            if axis == 0 {
                return out;
            }
        }
    }
}

fn unit_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

/// Random real-valued scalar series: conjugate-paired coefficients on the
/// half box, zero mean.
fn real_series(rng: &mut ChaCha8Rng, modes: i32, periods: &[u8]) -> Result<TrigSeries> {
    let mut s = TrigSeries::zero(periods)?;
    for k in half_box(modes, periods.len()) {
        let c = unit_complex(rng);
        let neg: Vec<i32> = k.iter().map(|x| -x).collect();
        s.insert(k, c)?;
        s.insert(neg, c.conj())?;
    }
    s.refresh_real_flag();
    Ok(s)
}

/// Random complex-valued scalar series supported on the full mode box
/// `{-n..=n}^dim \ {0}`.
fn complex_series(rng: &mut ChaCha8Rng, modes: i32, periods: &[u8]) -> Result<TrigSeries> {
    let mut s = TrigSeries::zero(periods)?;
    for k in half_box(modes, periods.len()) {
        let neg: Vec<i32> = k.iter().map(|x| -x).collect();
        s.insert(k, unit_complex(rng))?;
        s.insert(neg, unit_complex(rng))?;
    }
    s.refresh_real_flag();
    Ok(s)
}

/// Deterministic random real trace-free perturbation field.
///
/// The three independent entries are real series on the half mode box; the
/// result is rescaled so `norm_h(spec.h) == spec.amplitude` up to roundoff
/// (relative error below 1e-14). Same seed and spec give identical output.
pub fn gen_perturbation(seed: u64, spec: &InstanceSpec) -> Result<MatSeries> {
    spec.validate()?;
    let periods = spec.periods();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e00 = real_series(&mut rng, spec.modes, &periods)?;
    let e01 = real_series(&mut rng, spec.modes, &periods)?;
    let e10 = real_series(&mut rng, spec.modes, &periods)?;
    let raw = MatSeries::from_entries(
        [[e00.clone(), e01], [e10, e00.scale_real(-1.0)]],
        MatTag::Sl2R,
    )?;
    let norm = raw.norm_h(spec.h);
    Ok(raw.scale_real(spec.amplitude / norm))
}

/// Deterministic random field with the unit-disk-frame symmetry
/// `[[i g1, g2], [conj(g2), -i g1]]` where `g1` is real-valued, rescaled so
/// `norm_h(spec.h) == spec.amplitude` up to roundoff.
pub fn gen_disk_field(seed: u64, spec: &InstanceSpec) -> Result<MatSeries> {
    spec.validate()?;
    let periods = spec.periods();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g1 = real_series(&mut rng, spec.modes, &periods)?;
    let g2 = complex_series(&mut rng, spec.modes, &periods)?;
    let e00 = g1.scale(Complex64::new(0.0, 1.0));
    let e11 = g1.scale(Complex64::new(0.0, -1.0));
    let e10 = g2.conj();
    let raw = MatSeries::from_entries([[e00, g2], [e10, e11]], MatTag::Su11)?;
    let norm = raw.norm_h(spec.h);
    Ok(raw.scale_real(spec.amplitude / norm))
}

/// Deterministic random complex scalar series with `norm_h(spec.h)`
/// rescaled to `spec.amplitude` up to roundoff.
pub fn gen_scalar(seed: u64, spec: &InstanceSpec) -> Result<TrigSeries> {
    spec.validate()?;
    let periods = spec.periods();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = complex_series(&mut rng, spec.modes, &periods)?;
    let norm = raw.norm_h(spec.h);
    Ok(raw.scale(Complex64::new(spec.amplitude / norm, 0.0)))
}

/// Deterministic random real scalar series with `norm_h(spec.h)` rescaled
/// to `spec.amplitude` up to roundoff.
pub fn gen_real_scalar(seed: u64, spec: &InstanceSpec) -> Result<TrigSeries> {
    spec.validate()?;
    let periods = spec.periods();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = real_series(&mut rng, spec.modes, &periods)?;
    let norm = raw.norm_h(spec.h);
    Ok(raw.scale_real(spec.amplitude / norm))
}
