//! Finite trigonometric series on tori with per-axis period 1 or 2, and
//! 2x2 matrix-valued series built from them.
//!
//! Axes of period 2 store integer modes on the doubled lattice: a stored
//! index `k` on such an axis represents the physical frequency `k/2`, so the
//! basis function is `exp(pi i k x)`. Analytic norms weight each mode by
//! `exp(2 pi h |k| / period)`, i.e. by the physical frequency, never the
//! stored index.

use std::collections::BTreeMap;

use num_complex::Complex64;
use serde::ser::SerializeSeq;
use serde::{Deserialize, Serialize};

use crate::mat2::{CMat2, Mat2};
use crate::{Error, Result};

const TWO_PI: f64 = std::f64::consts::TAU;

fn check_periods(periods: &[u8]) -> Result<()> {
    if periods.is_empty() {
        return Err(Error::InvalidArgument("periods must be non-empty".into()));
    }
    if periods.iter().any(|p| *p != 1 && *p != 2) {
        return Err(Error::InvalidArgument(format!(
            "per-axis periods must be 1 or 2, got {periods:?}"
        )));
    }
    Ok(())
}

/// Finite Fourier series `sum_k c_k exp(2 pi i <k, x / period>)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrigSeries {
    periods: Vec<u8>,
    coeffs: BTreeMap<Vec<i32>, Complex64>,
    real: bool,
}

impl TrigSeries {
    pub fn zero(periods: &[u8]) -> Result<TrigSeries> {
        check_periods(periods)?;
        Ok(TrigSeries {
            periods: periods.to_vec(),
            coeffs: BTreeMap::new(),
            real: true,
        })
    }

    pub fn constant(periods: &[u8], c: Complex64) -> Result<TrigSeries> {
        let mut s = TrigSeries::zero(periods)?;
        s.insert(vec![0; periods.len()], c)?;
        s.real = c.im == 0.0;
        Ok(s)
    }

    pub fn from_coeffs(
        periods: &[u8],
        coeffs: impl IntoIterator<Item = (Vec<i32>, Complex64)>,
    ) -> Result<TrigSeries> {
        let mut s = TrigSeries::zero(periods)?;
        for (k, c) in coeffs {
            s.insert(k, c)?;
        }
        s.real = s.is_hermitian(0.0);
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.periods.len()
    }

    pub fn periods(&self) -> &[u8] {
        &self.periods
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn coeffs(&self) -> &BTreeMap<Vec<i32>, Complex64> {
        &self.coeffs
    }

    pub fn get(&self, k: &[i32]) -> Complex64 {
        self.coeffs.get(k).copied().unwrap_or(Complex64::new(0.0, 0.0))
    }

    /// Insert or overwrite one coefficient (exact zeros are dropped).
    /// Clears the realness flag; call [`TrigSeries::refresh_real_flag`]
    /// after a batch of inserts if symmetry is expected.
    pub fn insert(&mut self, k: Vec<i32>, c: Complex64) -> Result<()> {
        if k.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: k.len(),
                context: "frequency index",
            });
        }
        if c.norm_sqr() == 0.0 {
            self.coeffs.remove(&k);
        } else {
            self.coeffs.insert(k, c);
        }
        self.real = false;
        Ok(())
    }

    /// Whether `c_{-k} = conj(c_k)` holds within `tol` for every mode.
    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|(k, c)| {
            let neg: Vec<i32> = k.iter().map(|x| -x).collect();
            (self.get(&neg) - c.conj()).norm() <= tol
        })
    }

    /// Recompute the realness flag from the coefficients (tolerance 1e-12
    /// relative to the largest amplitude).
    pub fn refresh_real_flag(&mut self) {
        let scale = self.max_abs_coeff().max(1e-300);
        self.real = self.is_hermitian(1e-12 * scale);
    }

    /// Symmetrize `c_k <- (c_k + conj(c_{-k}))/2`, making the series exactly
    /// real-valued, and set the flag.
    pub fn hermitize(&mut self) {
        let old = self.coeffs.clone();
        let get = |k: &[i32]| old.get(k).copied().unwrap_or(Complex64::new(0.0, 0.0));
        let mut new = BTreeMap::new();
        for k in old.keys() {
            let neg: Vec<i32> = k.iter().map(|x| -x).collect();
            let c = 0.5 * (get(k) + get(&neg).conj());
            if c.norm_sqr() != 0.0 {
                new.insert(k.clone(), c);
            }
        }
        self.coeffs = new;
        self.real = true;
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Largest |stored index| per axis.
    pub fn support_box(&self) -> Vec<i32> {
        let mut b = vec![0i32; self.dim()];
        for k in self.coeffs.keys() {
            for (j, kj) in k.iter().enumerate() {
                b[j] = b[j].max(kj.abs());
            }
        }
        b
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        assert_eq!(x.len(), self.dim(), "evaluation point dimension");
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, c) in &self.coeffs {
            let mut phase = 0.0;
            for j in 0..x.len() {
                phase += k[j] as f64 * x[j] / self.periods[j] as f64;
            }
            acc += c * Complex64::from_polar(1.0, TWO_PI * phase);
        }
        acc
    }

    /// Real part of the evaluation (the value itself when the series is
    /// real-valued).
    pub fn eval_real(&self, x: &[f64]) -> f64 {
        self.eval(x).re
    }

    fn check_compatible(&self, other: &TrigSeries, context: &'static str) -> Result<()> {
        if self.periods != other.periods {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: other.dim(),
                context,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &TrigSeries) -> Result<TrigSeries> {
        self.check_compatible(other, "series addition")?;
        let mut out = self.clone();
        for (k, c) in &other.coeffs {
            let v = out.get(k) + c;
            out.coeffs.remove(k);
            if v.norm_sqr() != 0.0 {
                out.coeffs.insert(k.clone(), v);
            }
        }
        out.real = self.real && other.real;
        Ok(out)
    }

    pub fn sub(&self, other: &TrigSeries) -> Result<TrigSeries> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, z: Complex64) -> TrigSeries {
        let mut out = self.clone();
        if z.norm_sqr() == 0.0 {
            out.coeffs.clear();
            out.real = true;
            return out;
        }
        for c in out.coeffs.values_mut() {
            *c *= z;
        }
        out.real = self.real && z.im == 0.0;
        out
    }

    pub fn scale_real(&self, t: f64) -> TrigSeries {
        self.scale(Complex64::new(t, 0.0))
    }

    /// Product of two series (coefficient convolution).
    pub fn mul(&self, other: &TrigSeries) -> Result<TrigSeries> {
        self.check_compatible(other, "series product")?;
        let mut out = TrigSeries::zero(&self.periods)?;
        for (ka, ca) in &self.coeffs {
            for (kb, cb) in &other.coeffs {
                let k: Vec<i32> = ka.iter().zip(kb).map(|(a, b)| a + b).collect();
                let v = out.get(&k) + ca * cb;
                out.coeffs.remove(&k);
                if v.norm_sqr() != 0.0 {
                    out.coeffs.insert(k, v);
                }
            }
        }
        out.real = self.real && other.real;
        Ok(out)
    }

    /// The translated series `x -> f(x + delta)`.
    pub fn shift(&self, delta: &[f64]) -> Result<TrigSeries> {
        if delta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: delta.len(),
                context: "shift vector",
            });
        }
        let mut out = self.clone();
        for (k, c) in out.coeffs.iter_mut() {
            let mut phase = 0.0;
            for j in 0..delta.len() {
                phase += k[j] as f64 * delta[j] / self.periods[j] as f64;
            }
            *c *= Complex64::from_polar(1.0, TWO_PI * phase);
        }
        out.real = self.real;
        Ok(out)
    }

    /// Reinterpret the series on a torus with the given (equal or larger)
    /// periods: an axis upgraded from period 1 to period 2 doubles its
    /// stored indices so every physical frequency is preserved exactly.
    pub fn on_periods(&self, new_periods: &[u8]) -> Result<TrigSeries> {
        check_periods(new_periods)?;
        if new_periods.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: new_periods.len(),
                context: "period vector",
            });
        }
        for (j, (&old, &new)) in self.periods.iter().zip(new_periods).enumerate() {
            if new < old {
                return Err(Error::InvalidArgument(format!(
                    "cannot shrink the period of axis {j} from {old} to {new}"
                )));
            }
        }
        let mut out = TrigSeries::zero(new_periods)?;
        for (k, c) in &self.coeffs {
            let nk: Vec<i32> = k
                .iter()
                .zip(self.periods.iter().zip(new_periods))
                .map(|(kj, (&old, &new))| kj * (new / old) as i32)
                .collect();
            out.insert(nk, *c)?;
        }
        out.real = self.real;
        Ok(out)
    }

    /// Weighted 1-norm `sum_k |c_k| exp(2 pi h sum_j |k_j| / period_j)`.
    pub fn norm_h(&self, h: f64) -> f64 {
        self.coeffs
            .iter()
            .map(|(k, c)| {
                let w: f64 = k
                    .iter()
                    .zip(&self.periods)
                    .map(|(kj, p)| kj.abs() as f64 / *p as f64)
                    .sum();
                c.norm() * (TWO_PI * h * w).exp()
            })
            .sum()
    }

    /// Pointwise complex conjugate of the function: coefficients become
    /// `c'(k) = conj(c(-k))`. Real-valued series are fixed points.
    pub fn conj(&self) -> TrigSeries {
        let mut coeffs = BTreeMap::new();
        for (k, c) in &self.coeffs {
            let neg: Vec<i32> = k.iter().map(|x| -x).collect();
            coeffs.insert(neg, c.conj());
        }
        TrigSeries {
            periods: self.periods.clone(),
            coeffs,
            real: self.real,
        }
    }

    /// Drop all modes with some |stored index| exceeding the box.
    pub fn truncate(&self, box_: &[i32]) -> Result<TrigSeries> {
        if box_.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: box_.len(),
                context: "truncation box",
            });
        }
        let mut out = self.clone();
        out.coeffs
            .retain(|k, _| k.iter().zip(box_).all(|(kj, b)| kj.abs() <= *b));
        Ok(out)
    }

    /// Drop coefficients of magnitude <= `tol`.
    pub fn prune(&self, tol: f64) -> TrigSeries {
        let mut out = self.clone();
        out.coeffs.retain(|_, c| c.norm() > tol);
        out
    }

    /// Evaluate on the full product grid `x_j = period_j * t_j / n_j`
    /// (row-major, last axis fastest) by separable synthesis.
    pub fn sample_grid(&self, grid: &[usize]) -> Result<Vec<Complex64>> {
        if grid.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: grid.len(),
                context: "sampling grid",
            });
        }
        let box_ = self.support_box();
        let mode_dims: Vec<usize> = box_.iter().map(|b| (2 * b + 1) as usize).collect();
        // Dense coefficient tensor, row-major over (k_j + b_j).
        let total_modes: usize = mode_dims.iter().product();
        let mut data = vec![Complex64::new(0.0, 0.0); total_modes];
        for (k, c) in &self.coeffs {
            let mut idx = 0usize;
            for j in 0..self.dim() {
                idx = idx * mode_dims[j] + (k[j] + box_[j]) as usize;
            }
            data[idx] = *c;
        }
        let tables: Vec<Vec<Complex64>> = (0..self.dim())
            .map(|j| {
                let n = grid[j];
                let m = mode_dims[j];
                let mut tab = vec![Complex64::new(0.0, 0.0); n * m];
                for t in 0..n {
                    for ki in 0..m {
                        let k = ki as i32 - box_[j];
                        tab[t * m + ki] =
                            Complex64::from_polar(1.0, TWO_PI * k as f64 * t as f64 / n as f64);
                    }
                }
                tab
            })
            .collect();
        Ok(transform_axes(data, &mode_dims, grid, &tables))
    }

    /// Max |value| over the product grid.
    pub fn sup_abs_grid(&self, grid: &[usize]) -> Result<f64> {
        Ok(self
            .sample_grid(grid)?
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }

    /// Least-squares/collocation projection of point samples onto the mode
    /// box, with an aliasing guard `n_j >= 2 (2 box_j + 1)` per axis.
    ///
    /// `samples` is row-major over the grid (last axis fastest), as produced
    /// by [`grid_points`].
    pub fn project_samples(
        samples: &[Complex64],
        periods: &[u8],
        box_: &[i32],
        grid: &[usize],
    ) -> Result<TrigSeries> {
        check_periods(periods)?;
        let d = periods.len();
        if box_.len() != d || grid.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: box_.len().max(grid.len()),
                context: "projection box/grid",
            });
        }
        for j in 0..d {
            if box_[j] < 0 {
                return Err(Error::InvalidArgument(format!("negative box on axis {j}")));
            }
            let need = 2 * (2 * box_[j] as usize + 1);
            if grid[j] < need {
                return Err(Error::AliasingGuard {
                    axis: j,
                    grid: grid[j],
                    need,
                    cutoff: box_[j],
                });
            }
        }
        let total: usize = grid.iter().product();
        if samples.len() != total {
            return Err(Error::DimensionMismatch {
                expected: total,
                got: samples.len(),
                context: "sample count",
            });
        }
        let mode_dims: Vec<usize> = box_.iter().map(|b| (2 * b + 1) as usize).collect();
        let tables: Vec<Vec<Complex64>> = (0..d)
            .map(|j| {
                let n = grid[j];
                let m = mode_dims[j];
                let mut tab = vec![Complex64::new(0.0, 0.0); n * m];
                for ki in 0..m {
                    let k = ki as i32 - box_[j];
                    for t in 0..n {
                        tab[ki * n + t] =
                            Complex64::from_polar(1.0, -TWO_PI * k as f64 * t as f64 / n as f64);
                    }
                }
                tab
            })
            .collect();
        let raw = transform_axes(samples.to_vec(), grid, &mode_dims, &tables);
        let scale = 1.0 / total as f64;

        // Detect real-valued input before building the map.
        let amp = samples.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let max_im = samples.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        let real_input = max_im <= 1e-10 * (1.0 + amp);

        // Modes below the collocation noise floor are meaningless and, once
        // multiplied by an analytic weight, would badly inflate norms.
        let floor = 1e-14 * amp;
        let mut out = TrigSeries::zero(periods)?;
        let mut idx = vec![0usize; d];
        for flat in 0..raw.len() {
            let c = raw[flat] * scale;
            if c.norm() > floor {
                let k: Vec<i32> = idx
                    .iter()
                    .zip(box_)
                    .map(|(ki, b)| *ki as i32 - b)
                    .collect();
                out.coeffs.insert(k, c);
            }
            // Row-major increment, last axis fastest.
            for j in (0..d).rev() {
                idx[j] += 1;
                if idx[j] < mode_dims[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        if real_input {
            out.hermitize();
        } else {
            out.real = false;
        }
        Ok(out)
    }

    /// Project a function by sampling it on the product grid.
    pub fn project<F>(f: F, periods: &[u8], box_: &[i32], grid: &[usize]) -> Result<TrigSeries>
    where
        F: Fn(&[f64]) -> Complex64,
    {
        check_periods(periods)?;
        let pts = grid_points(periods, grid);
        let samples: Vec<Complex64> = pts.iter().map(|x| f(x)).collect();
        TrigSeries::project_samples(&samples, periods, box_, grid)
    }
}

/// All points of the product grid `x_j = period_j * t_j / n_j`, row-major
/// with the last axis fastest.
pub fn grid_points(periods: &[u8], grid: &[usize]) -> Vec<Vec<f64>> {
    let d = grid.len();
    let total: usize = grid.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        out.push(
            idx.iter()
                .zip(periods)
                .zip(grid)
                .map(|((t, p), n)| *p as f64 * *t as f64 / *n as f64)
                .collect(),
        );
        for j in (0..d).rev() {
            idx[j] += 1;
            if idx[j] < grid[j] {
                break;
            }
            idx[j] = 0;
        }
    }
    out
}

/// Apply a per-axis linear transform to a row-major tensor.
///
/// Processes axes from last to first; each pass contracts the current last
/// axis with `tables[axis]` (layout `tab[out * in + t_in]`) and writes the
/// transformed axis in front, so after all passes the axes are back in their
/// original order with sizes `out_dims`.
fn transform_axes(
    mut data: Vec<Complex64>,
    in_dims: &[usize],
    out_dims: &[usize],
    tables: &[Vec<Complex64>],
) -> Vec<Complex64> {
    let d = in_dims.len();
    for axis in (0..d).rev() {
        let n_in = in_dims[axis];
        let n_out = out_dims[axis];
        let rows = data.len() / n_in;
        let tab = &tables[axis];
        let mut next = vec![Complex64::new(0.0, 0.0); rows * n_out];
        for a in 0..rows {
            let row = &data[a * n_in..(a + 1) * n_in];
            for o in 0..n_out {
                let trow = &tab[o * n_in..(o + 1) * n_in];
                let mut acc = Complex64::new(0.0, 0.0);
                for t in 0..n_in {
                    acc += row[t] * trow[t];
                }
                next[o * rows + a] = acc;
            }
        }
        data = next;
    }
    data
}

// --- serialization: {dim, periods, coeffs: [[k..., re, im], ...], real} ---

struct CoeffEntry<'a>(&'a [i32], Complex64);

impl Serialize for CoeffEntry<'_> {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = ser.serialize_seq(Some(self.0.len() + 2))?;
        for k in self.0 {
            seq.serialize_element(k)?;
        }
        seq.serialize_element(&self.1.re)?;
        seq.serialize_element(&self.1.im)?;
        seq.end()
    }
}

impl Serialize for TrigSeries {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = ser.serialize_struct("TrigSeries", 4)?;
        st.serialize_field("dim", &self.dim())?;
        st.serialize_field("periods", &self.periods)?;
        let entries: Vec<CoeffEntry> = self
            .coeffs
            .iter()
            .map(|(k, c)| CoeffEntry(k, *c))
            .collect();
        st.serialize_field("coeffs", &entries)?;
        st.serialize_field("real", &self.real)?;
        st.end()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrigSeriesWire {
    dim: usize,
    periods: Vec<u8>,
    coeffs: Vec<Vec<f64>>,
    real: bool,
}

impl<'de> Deserialize<'de> for TrigSeries {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        let wire = TrigSeriesWire::deserialize(de)?;
        if wire.periods.len() != wire.dim {
            return Err(D::Error::custom("periods length must equal dim"));
        }
        check_periods(&wire.periods).map_err(D::Error::custom)?;
        let mut s = TrigSeries::zero(&wire.periods).map_err(D::Error::custom)?;
        for row in &wire.coeffs {
            if row.len() != wire.dim + 2 {
                return Err(D::Error::custom(format!(
                    "coefficient row must have dim + 2 = {} entries",
                    wire.dim + 2
                )));
            }
            let mut k = Vec::with_capacity(wire.dim);
            for v in &row[..wire.dim] {
                if v.fract() != 0.0 || v.abs() > i32::MAX as f64 {
                    return Err(D::Error::custom(format!("invalid frequency index {v}")));
                }
                k.push(*v as i32);
            }
            let c = Complex64::new(row[wire.dim], row[wire.dim + 1]);
            if s.coeffs.insert(k.clone(), c).is_some() {
                return Err(D::Error::custom(format!("duplicate frequency index {k:?}")));
            }
        }
        s.real = wire.real;
        if s.real && !s.is_hermitian(1e-9 * (1.0 + s.max_abs_coeff())) {
            return Err(D::Error::custom(
                "real flag set but coefficients are not Hermitian-symmetric",
            ));
        }
        Ok(s)
    }
}

/// Structure tag for matrix-valued series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatTag {
    /// Pointwise real trace-free (Lie-algebra valued).
    #[serde(rename = "sl2R")]
    Sl2R,
    /// Trace-free in the complexified frame with the su(1,1) symmetry.
    #[serde(rename = "su11")]
    Su11,
    /// Pointwise in the group (determinant 1), e.g. a transfer map.
    #[serde(rename = "SL2R_valued")]
    Sl2RValued,
    /// No structure claimed.
    #[serde(rename = "general")]
    General,
}

/// 2x2 matrix of trigonometric series sharing one torus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatSeries {
    pub tag: MatTag,
    /// Entries `e[row][col]`.
    pub e: [[TrigSeries; 2]; 2],
}

impl MatSeries {
    pub fn zero(periods: &[u8], tag: MatTag) -> Result<MatSeries> {
        let z = TrigSeries::zero(periods)?;
        Ok(MatSeries {
            tag,
            e: [[z.clone(), z.clone()], [z.clone(), z]],
        })
    }

    pub fn from_constant(periods: &[u8], m: &Mat2, tag: MatTag) -> Result<MatSeries> {
        let mut s = MatSeries::zero(periods, tag)?;
        for i in 0..2 {
            for j in 0..2 {
                s.e[i][j] = TrigSeries::constant(periods, Complex64::new(m.0[i][j], 0.0))?;
            }
        }
        Ok(s)
    }

    pub fn from_constant_c(periods: &[u8], m: &CMat2, tag: MatTag) -> Result<MatSeries> {
        let mut s = MatSeries::zero(periods, tag)?;
        for i in 0..2 {
            for j in 0..2 {
                s.e[i][j] = TrigSeries::constant(periods, m.0[i][j])?;
            }
        }
        Ok(s)
    }

    pub fn from_entries(e: [[TrigSeries; 2]; 2], tag: MatTag) -> Result<MatSeries> {
        let p = e[0][0].periods().to_vec();
        for row in &e {
            for s in row {
                if s.periods() != p.as_slice() {
                    return Err(Error::DimensionMismatch {
                        expected: p.len(),
                        got: s.dim(),
                        context: "matrix entries on different tori",
                    });
                }
            }
        }
        Ok(MatSeries { tag, e })
    }

    pub fn dim(&self) -> usize {
        self.e[0][0].dim()
    }

    pub fn periods(&self) -> &[u8] {
        self.e[0][0].periods()
    }

    pub fn eval(&self, x: &[f64]) -> CMat2 {
        CMat2([
            [self.e[0][0].eval(x), self.e[0][1].eval(x)],
            [self.e[1][0].eval(x), self.e[1][1].eval(x)],
        ])
    }

    pub fn eval_real(&self, x: &[f64]) -> Mat2 {
        Mat2([
            [self.e[0][0].eval(x).re, self.e[0][1].eval(x).re],
            [self.e[1][0].eval(x).re, self.e[1][1].eval(x).re],
        ])
    }

    pub fn add(&self, other: &MatSeries) -> Result<MatSeries> {
        Ok(MatSeries {
            tag: if self.tag == other.tag {
                self.tag
            } else {
                MatTag::General
            },
            e: [
                [
                    self.e[0][0].add(&other.e[0][0])?,
                    self.e[0][1].add(&other.e[0][1])?,
                ],
                [
                    self.e[1][0].add(&other.e[1][0])?,
                    self.e[1][1].add(&other.e[1][1])?,
                ],
            ],
        })
    }

    pub fn sub(&self, other: &MatSeries) -> Result<MatSeries> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    pub fn scale(&self, z: Complex64) -> MatSeries {
        MatSeries {
            tag: self.tag,
            e: [
                [self.e[0][0].scale(z), self.e[0][1].scale(z)],
                [self.e[1][0].scale(z), self.e[1][1].scale(z)],
            ],
        }
    }

    pub fn scale_real(&self, t: f64) -> MatSeries {
        self.scale(Complex64::new(t, 0.0))
    }

    /// Matrix product (entrywise coefficient convolution).
    pub fn matmul(&self, other: &MatSeries) -> Result<MatSeries> {
        let mut out = MatSeries::zero(self.periods(), MatTag::General)?;
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = TrigSeries::zero(self.periods())?;
                for l in 0..2 {
                    acc = acc.add(&self.e[i][l].mul(&other.e[l][j])?)?;
                }
                out.e[i][j] = acc;
            }
        }
        Ok(out)
    }

    pub fn shift(&self, delta: &[f64]) -> Result<MatSeries> {
        Ok(MatSeries {
            tag: self.tag,
            e: [
                [self.e[0][0].shift(delta)?, self.e[0][1].shift(delta)?],
                [self.e[1][0].shift(delta)?, self.e[1][1].shift(delta)?],
            ],
        })
    }

    /// Max over entries of the weighted norm.
    pub fn norm_h(&self, h: f64) -> f64 {
        self.e
            .iter()
            .flatten()
            .map(|s| s.norm_h(h))
            .fold(0.0, f64::max)
    }

    pub fn truncate(&self, box_: &[i32]) -> Result<MatSeries> {
        Ok(MatSeries {
            tag: self.tag,
            e: [
                [self.e[0][0].truncate(box_)?, self.e[0][1].truncate(box_)?],
                [self.e[1][0].truncate(box_)?, self.e[1][1].truncate(box_)?],
            ],
        })
    }

    pub fn prune(&self, tol: f64) -> MatSeries {
        MatSeries {
            tag: self.tag,
            e: [
                [self.e[0][0].prune(tol), self.e[0][1].prune(tol)],
                [self.e[1][0].prune(tol), self.e[1][1].prune(tol)],
            ],
        }
    }

    pub fn trace(&self) -> Result<TrigSeries> {
        self.e[0][0].add(&self.e[1][1])
    }

    /// Pointwise determinant as a series.
    pub fn det_series(&self) -> Result<TrigSeries> {
        self.e[0][0]
            .mul(&self.e[1][1])?
            .sub(&self.e[0][1].mul(&self.e[1][0])?)
    }

    /// Pointwise adjugate `[[d, -b], [-c, a]]`; for a series of determinant-1
    /// matrices this is the pointwise inverse.
    pub fn adjugate(&self) -> MatSeries {
        let neg = Complex64::new(-1.0, 0.0);
        MatSeries {
            tag: self.tag,
            e: [
                [self.e[1][1].clone(), self.e[0][1].scale(neg)],
                [self.e[1][0].scale(neg), self.e[0][0].clone()],
            ],
        }
    }

    /// Entrywise [`TrigSeries::on_periods`].
    pub fn on_periods(&self, new_periods: &[u8]) -> Result<MatSeries> {
        Ok(MatSeries {
            tag: self.tag,
            e: [
                [
                    self.e[0][0].on_periods(new_periods)?,
                    self.e[0][1].on_periods(new_periods)?,
                ],
                [
                    self.e[1][0].on_periods(new_periods)?,
                    self.e[1][1].on_periods(new_periods)?,
                ],
            ],
        })
    }

    pub fn support_box(&self) -> Vec<i32> {
        let mut b = vec![0i32; self.dim()];
        for s in self.e.iter().flatten() {
            for (j, v) in s.support_box().iter().enumerate() {
                b[j] = b[j].max(*v);
            }
        }
        b
    }

    /// Coefficientwise conjugation `P S P^-1` by a constant real matrix.
    pub fn conjugate_const(&self, p: &Mat2) -> Result<MatSeries> {
        self.conjugate_const_c(&p.to_complex())
    }

    /// Coefficientwise conjugation by a constant complex matrix.
    pub fn conjugate_const_c(&self, p: &CMat2) -> Result<MatSeries> {
        let pinv = p.inverse();
        let mut out = MatSeries::zero(self.periods(), self.tag)?;
        // Collect the union of supports, then map each coefficient matrix.
        let mut keys: std::collections::BTreeSet<Vec<i32>> = std::collections::BTreeSet::new();
        for s in self.e.iter().flatten() {
            keys.extend(s.coeffs.keys().cloned());
        }
        for k in keys {
            let ck = CMat2([
                [self.e[0][0].get(&k), self.e[0][1].get(&k)],
                [self.e[1][0].get(&k), self.e[1][1].get(&k)],
            ]);
            let m = p.mul(&ck).mul(&pinv);
            for i in 0..2 {
                for j in 0..2 {
                    if m.0[i][j].norm_sqr() != 0.0 {
                        out.e[i][j].coeffs.insert(k.clone(), m.0[i][j]);
                    }
                }
            }
        }
        for s in out.e.iter_mut().flatten() {
            s.refresh_real_flag();
        }
        Ok(out)
    }

    /// Evaluate on the full product grid (row-major, last axis fastest).
    pub fn sample_grid(&self, grid: &[usize]) -> Result<Vec<CMat2>> {
        let a = self.e[0][0].sample_grid(grid)?;
        let b = self.e[0][1].sample_grid(grid)?;
        let c = self.e[1][0].sample_grid(grid)?;
        let d = self.e[1][1].sample_grid(grid)?;
        Ok((0..a.len())
            .map(|i| CMat2([[a[i], b[i]], [c[i], d[i]]]))
            .collect())
    }

    /// Project a real-matrix-valued function on the product grid.
    pub fn project_mat<F>(
        f: F,
        periods: &[u8],
        box_: &[i32],
        grid: &[usize],
        tag: MatTag,
    ) -> Result<MatSeries>
    where
        F: Fn(&[f64]) -> Mat2,
    {
        check_periods(periods)?;
        let pts = grid_points(periods, grid);
        let samples: Vec<Mat2> = pts.iter().map(|x| f(x)).collect();
        let entry = |i: usize, j: usize| -> Result<TrigSeries> {
            let vals: Vec<Complex64> = samples
                .iter()
                .map(|m| Complex64::new(m.0[i][j], 0.0))
                .collect();
            TrigSeries::project_samples(&vals, periods, box_, grid)
        };
        Ok(MatSeries {
            tag,
            e: [[entry(0, 0)?, entry(0, 1)?], [entry(1, 0)?, entry(1, 1)?]],
        })
    }

    /// Project a complex-matrix-valued function on the product grid.
    pub fn project_cmat<F>(
        f: F,
        periods: &[u8],
        box_: &[i32],
        grid: &[usize],
        tag: MatTag,
    ) -> Result<MatSeries>
    where
        F: Fn(&[f64]) -> CMat2,
    {
        check_periods(periods)?;
        let pts = grid_points(periods, grid);
        let samples: Vec<CMat2> = pts.iter().map(|x| f(x)).collect();
        let entry = |i: usize, j: usize| -> Result<TrigSeries> {
            let vals: Vec<Complex64> = samples.iter().map(|m| m.0[i][j]).collect();
            TrigSeries::project_samples(&vals, periods, box_, grid)
        };
        Ok(MatSeries {
            tag,
            e: [[entry(0, 0)?, entry(0, 1)?], [entry(1, 0)?, entry(1, 1)?]],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn projection_recovers_explicit_trigonometric_polynomial() {
        // f(x) = 3 + cos(2 pi x) + 2 sin(6 pi x)
        let f = |x: &[f64]| {
            c(
                3.0 + (TWO_PI * x[0]).cos() + 2.0 * (3.0 * TWO_PI * x[0]).sin(),
                0.0,
            )
        };
        let s = TrigSeries::project(f, &[1], &[4], &[32]).unwrap();
        assert!(s.is_real());
        assert!((s.get(&[0]) - c(3.0, 0.0)).norm() < 1e-12);
        assert!((s.get(&[1]) - c(0.5, 0.0)).norm() < 1e-12);
        assert!((s.get(&[-1]) - c(0.5, 0.0)).norm() < 1e-12);
        assert!((s.get(&[3]) - c(0.0, -1.0)).norm() < 1e-12);
        assert!((s.get(&[-3]) - c(0.0, 1.0)).norm() < 1e-12);
        assert!((s.get(&[2])).norm() < 1e-13);
        // Round-trip: evaluating the projection reproduces f.
        for t in 0..13 {
            let x = [t as f64 / 13.0];
            assert!((s.eval(&x) - f(&x)).norm() < 1e-12);
        }
    }

    #[test]
    fn projection_exact_on_mixed_period_torus() {
        // f(x, y) = cos(2 pi x) cos(pi y) on T x 2T: modes (+-1, +-1), 1/4 each.
        let f = |x: &[f64]| {
            c(
                (TWO_PI * x[0]).cos() * (std::f64::consts::PI * x[1]).cos(),
                0.0,
            )
        };
        let s = TrigSeries::project(f, &[1, 2], &[2, 2], &[12, 12]).unwrap();
        for (kx, ky) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            assert!((s.get(&[kx, ky]) - c(0.25, 0.0)).norm() < 1e-12);
        }
        assert!((s.get(&[1, 0])).norm() < 1e-13);
        // The function has period 2 in y: values at y and y + 1 differ.
        let a = s.eval_real(&[0.1, 0.3]);
        let b = s.eval_real(&[0.1, 1.3]);
        let a2 = s.eval_real(&[0.1, 2.3]);
        assert!((a - b).abs() > 0.1);
        assert!((a - a2).abs() < 1e-12);
    }

    #[test]
    fn aliasing_guard_rejects_coarse_grids() {
        let f = |_: &[f64]| c(1.0, 0.0);
        let err = TrigSeries::project(f, &[1], &[5], &[20]).unwrap_err();
        match err {
            Error::AliasingGuard { axis, grid, need, cutoff } => {
                assert_eq!((axis, grid, need, cutoff), (0, 20, 22, 5));
            }
            other => panic!("wrong error {other:?}"),
        }
        assert!(TrigSeries::project(f, &[1], &[5], &[22]).is_ok());
    }

    #[test]
    fn weighted_norm_uses_physical_frequencies() {
        let h = 0.37;
        // Stored index 1 on a period-1 axis weighs exp(2 pi h).
        let s1 = TrigSeries::from_coeffs(&[1], [(vec![1], c(2.0, 0.0))]).unwrap();
        assert!((s1.norm_h(h) - 2.0 * (TWO_PI * h).exp()).abs() < 1e-12);
        // Stored index 1 on a period-2 axis is physical frequency 1/2.
        let s2 = TrigSeries::from_coeffs(&[2], [(vec![1], c(2.0, 0.0))]).unwrap();
        assert!((s2.norm_h(h) - 2.0 * (std::f64::consts::PI * h).exp()).abs() < 1e-12);
        // h = 0 reduces to the plain 1-norm of the coefficients.
        assert!((s2.norm_h(0.0) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn product_matches_pointwise_multiplication() {
        let f = TrigSeries::from_coeffs(
            &[1],
            [
                (vec![0], c(0.3, 0.0)),
                (vec![1], c(0.2, -0.1)),
                (vec![-1], c(0.2, 0.1)),
            ],
        )
        .unwrap();
        let g = TrigSeries::from_coeffs(
            &[1],
            [(vec![2], c(0.0, 0.5)), (vec![-2], c(0.0, -0.5))],
        )
        .unwrap();
        let fg = f.mul(&g).unwrap();
        assert!(fg.is_real());
        for t in 0..17 {
            let x = [t as f64 / 17.0];
            let want = f.eval(&x) * g.eval(&x);
            assert!((fg.eval(&x) - want).norm() < 1e-13);
        }
    }

    #[test]
    fn shift_translates_the_argument() {
        let s = TrigSeries::from_coeffs(
            &[1, 2],
            [
                (vec![1, 0], c(0.4, 0.2)),
                (vec![-1, 0], c(0.4, -0.2)),
                (vec![0, 3], c(0.1, 0.0)),
                (vec![0, -3], c(0.1, 0.0)),
            ],
        )
        .unwrap();
        let delta = [0.23, 0.71];
        let shifted = s.shift(&delta).unwrap();
        assert!(shifted.is_real());
        for t in 0..7 {
            let x = [t as f64 / 7.0, 2.0 * t as f64 / 7.0];
            let moved = [x[0] + delta[0], x[1] + delta[1]];
            assert!((shifted.eval(&x) - s.eval(&moved)).norm() < 1e-12);
        }
    }

    #[test]
    fn synthesis_and_projection_are_inverse() {
        let s = TrigSeries::from_coeffs(
            &[1, 1],
            [
                (vec![0, 0], c(1.0, 0.0)),
                (vec![2, -1], c(0.3, 0.7)),
                (vec![-2, 1], c(0.3, -0.7)),
                (vec![1, 1], c(-0.2, 0.0)),
                (vec![-1, -1], c(-0.2, 0.0)),
            ],
        )
        .unwrap();
        let grid = [12usize, 12];
        let samples = s.sample_grid(&grid).unwrap();
        // Spot-check the sampling against direct evaluation.
        let pts = grid_points(&[1, 1], &grid);
        for (i, x) in pts.iter().enumerate().step_by(17) {
            assert!((samples[i] - s.eval(x)).norm() < 1e-12);
        }
        let back = TrigSeries::project_samples(&samples, &[1, 1], &[2, 2], &grid).unwrap();
        for (k, v) in s.coeffs() {
            assert!((back.get(k) - v).norm() < 1e-12, "mode {k:?}");
        }
        assert_eq!(back.coeffs().len(), s.coeffs().len());
    }

    #[test]
    fn matrix_series_product_and_conjugation_match_pointwise() {
        let a = MatSeries::project_mat(
            |x| {
                Mat2::new(
                    (TWO_PI * x[0]).cos(),
                    0.3,
                    (TWO_PI * x[0]).sin(),
                    -(TWO_PI * x[0]).cos(),
                )
            },
            &[1],
            &[1],
            &[8],
            MatTag::Sl2R,
        )
        .unwrap();
        let b = MatSeries::from_constant(&[1], &Mat2::new(0.0, 1.0, -1.0, 0.0), MatTag::Sl2R)
            .unwrap();
        let ab = a.matmul(&b).unwrap();
        let p = Mat2::new(2.0, 1.0, 1.0, 1.0);
        let conj = a.conjugate_const(&p).unwrap();
        let pinv = p.inverse();
        for t in 0..9 {
            let x = [t as f64 / 9.0];
            let am = a.eval_real(&x);
            let want_ab = am.mul(&b.eval_real(&x));
            let got_ab = ab.eval_real(&x);
            let want_conj = p.mul(&am).mul(&pinv);
            let got_conj = conj.eval_real(&x);
            assert!(want_ab.sub(&got_ab).norm_fro() < 1e-12);
            assert!(want_conj.sub(&got_conj).norm_fro() < 1e-12);
        }
        // Trace-free input stays trace-free under conjugation.
        assert!(conj.trace().unwrap().norm_h(0.0) < 1e-12);
        // Matrix norm is the max over entries.
        let nh = a.norm_h(0.1);
        let max_entry = a.e.iter().flatten().map(|s| s.norm_h(0.1)).fold(0.0, f64::max);
        assert_eq!(nh, max_entry);
    }

    #[test]
    fn json_round_trip_preserves_series_exactly() {
        let s = TrigSeries::from_coeffs(
            &[1, 2],
            [
                (vec![1, -3], c(0.125, -0.5)),
                (vec![-1, 3], c(0.125, 0.5)),
                (vec![0, 0], c(1.5, 0.0)),
            ],
        )
        .unwrap();
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"dim\":2"));
        assert!(json.contains("\"real\":true"));
        let back: TrigSeries = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
        // Unknown fields are rejected.
        let bad = json.replace("\"dim\"", "\"extra\":0,\"dim\"");
        assert!(serde_json::from_str::<TrigSeries>(&bad).is_err());
        // Realness claims are validated.
        let lying = r#"{"dim":1,"periods":[1],"coeffs":[[1,1.0,0.0]],"real":true}"#;
        assert!(serde_json::from_str::<TrigSeries>(lying).is_err());
        let honest = r#"{"dim":1,"periods":[1],"coeffs":[[1,1.0,0.0]],"real":false}"#;
        assert!(serde_json::from_str::<TrigSeries>(honest).is_ok());
    }

    fn small_series(seed: &[(i32, f64, f64)]) -> TrigSeries {
        let coeffs: Vec<(Vec<i32>, Complex64)> = seed
            .iter()
            .map(|(k, re, im)| (vec![*k], c(*re, *im)))
            .collect();
        TrigSeries::from_coeffs(&[1], coeffs).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        /// The weighted norm is an algebra norm: submultiplicative under the
        /// coefficient convolution and subadditive under addition.
        #[test]
        fn weighted_norm_is_an_algebra_norm(
            ks in proptest::collection::vec((-6i32..=6, -1.0f64..1.0, -1.0f64..1.0), 1..5),
            ls in proptest::collection::vec((-6i32..=6, -1.0f64..1.0, -1.0f64..1.0), 1..5),
            h in 0.0f64..0.5,
        ) {
            let f = small_series(&ks);
            let g = small_series(&ls);
            let fg = f.mul(&g).unwrap();
            let sum = f.add(&g).unwrap();
            let bound_mul = f.norm_h(h) * g.norm_h(h);
            let bound_add = f.norm_h(h) + g.norm_h(h);
            prop_assert!(fg.norm_h(h) <= bound_mul * (1.0 + 1e-12) + 1e-12);
            prop_assert!(sum.norm_h(h) <= bound_add * (1.0 + 1e-12) + 1e-12);
            // Norm is monotone in h.
            prop_assert!(f.norm_h(h) <= f.norm_h(h + 0.1) + 1e-12);
        }
    }
}
