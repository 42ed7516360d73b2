//! Spatial soft labels.
//!
//! For a batch of samples the target distribution of query `i` over candidate
//! location texts `j` is
//!
//! ```text
//! kernel[i][j] = exp(-d_ij^2 / (2 sigma^2))   if d_ij < d_cut, else 0
//! prior[i][j]  = 1 + alpha_street * [same street] + beta_city * [same city]
//! w[i][j]      = kernel[i][j] * prior[i][j] / sum_k kernel[i][k] * prior[i][k]
//! ```
//!
//! `d_ii = 0` always survives the cutoff, so every row has a positive
//! normalizer and a positive diagonal. The cutoff stays authoritative: a
//! shared street never revives a pair at or beyond `d_cut`.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geodesy::DistanceMatrix;
use crate::par;

/// Tolerance used when checking that a label row sums to one.
pub const ROW_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelConfig {
    /// Kernel scale in meters.
    pub sigma_m: f64,
    /// Strict cutoff distance in meters.
    pub d_cut_m: f64,
    pub alpha_street: f64,
    pub beta_city: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig {
            sigma_m: 150.0,
            d_cut_m: 1000.0,
            alpha_street: 0.5,
            beta_city: 0.25,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_m.is_finite() && self.sigma_m > 0.0) {
            return Err(Error::invalid(format!("sigma_m must be > 0, got {}", self.sigma_m)));
        }
        if !(self.d_cut_m.is_finite() && self.d_cut_m > 0.0) {
            return Err(Error::invalid(format!("d_cut_m must be > 0, got {}", self.d_cut_m)));
        }
        for (name, v) in [("alpha_street", self.alpha_street), ("beta_city", self.beta_city)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Same kernel with the hierarchical prior switched off.
    pub fn without_prior(mut self) -> Self {
        self.alpha_street = 0.0;
        self.beta_city = 0.0;
        self
    }

    #[inline]
    pub fn kernel(&self, d: f64) -> f64 {
        if d < self.d_cut_m {
            (-(d * d) / (2.0 * self.sigma_m * self.sigma_m)).exp()
        } else {
            0.0
        }
    }

    #[inline]
    fn prior(&self, a: &Sample, b: &Sample) -> f64 {
        let mut m = 1.0;
        if a.street == b.street && a.city == b.city {
            m += self.alpha_street;
        }
        if a.city == b.city {
            m += self.beta_city;
        }
        m
    }
}

/// Row-stochastic soft-label matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeightMatrix {
    w: Array2<f64>,
}

impl SpatialWeightMatrix {
    /// One-hot targets, i.e. the hard-label contrastive baseline.
    pub fn identity(n: usize) -> Self {
        SpatialWeightMatrix {
            w: Array2::eye(n),
        }
    }

    /// Wraps an arbitrary matrix after checking it is square and
    /// row-stochastic with entries in [0, 1].
    pub fn from_array(w: Array2<f64>) -> Result<Self> {
        check_row_stochastic(&w)?;
        Ok(SpatialWeightMatrix { w })
    }

    pub fn len(&self) -> usize {
        self.w.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.w.nrows() == 0
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn into_array(self) -> Array2<f64> {
        self.w
    }
}

pub(crate) fn check_row_stochastic(w: &Array2<f64>) -> Result<()> {
    if w.nrows() != w.ncols() {
        return Err(Error::ContractViolation(format!(
            "label matrix is {}x{}, expected square",
            w.nrows(),
            w.ncols()
        )));
    }
    for (i, row) in w.rows().into_iter().enumerate() {
        if row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::ContractViolation(format!(
                "label row {i} has entries outside [0, 1]"
            )));
        }
        let s: f64 = row.sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::ContractViolation(format!(
                "label row {i} sums to {s}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Distance-decay kernel applied elementwise to a distance matrix.
pub fn local_kernel(d: &DistanceMatrix, cfg: &KernelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    Ok(d.values().mapv(|x| cfg.kernel(x)))
}

fn check_labels(samples: &[Sample]) -> Result<()> {
    for s in samples {
        if s.street.is_empty() || s.city.is_empty() {
            return Err(Error::invalid(format!(
                "sample `{}` is missing a street or city label",
                s.id
            )));
        }
    }
    Ok(())
}

/// Multiplicative prior from shared street / city membership.
pub fn hierarchical_prior(samples: &[Sample], cfg: &KernelConfig) -> Result<Array2<f64>> {
    cfg.validate()?;
    check_labels(samples)?;
    let n = samples.len();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        cfg.prior(&samples[i], &samples[j])
    }))
}

/// One unnormalized and normalized label row, kept for diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRow {
    pub kernel: Vec<f64>,
    pub prior: Vec<f64>,
    pub weight: Vec<f64>,
}

/// Builds label row `i` from that sample's distances to every candidate.
pub fn label_row(
    i: usize,
    distances: &[f64],
    samples: &[Sample],
    cfg: &KernelConfig,
) -> Result<LabelRow> {
    cfg.validate()?;
    check_labels(samples)?;
    if distances.len() != samples.len() || i >= samples.len() {
        return Err(Error::invalid(format!(
            "label row {i}: {} distances for {} samples",
            distances.len(),
            samples.len()
        )));
    }
    Ok(label_row_unchecked(i, distances, samples, cfg))
}

fn label_row_unchecked(i: usize, distances: &[f64], samples: &[Sample], cfg: &KernelConfig) -> LabelRow {
    let kernel: Vec<f64> = distances.iter().map(|&d| cfg.kernel(d)).collect();
    let prior: Vec<f64> = samples.iter().map(|s| cfg.prior(&samples[i], s)).collect();
    let raw: Vec<f64> = kernel.iter().zip(&prior).map(|(k, p)| k * p).collect();
    let z: f64 = raw.iter().sum();
    let weight = raw.iter().map(|r| r / z).collect();
    LabelRow {
        kernel,
        prior,
        weight,
    }
}

/// Normalized soft labels for a batch. Rows are built independently.
pub fn soft_labels(
    d: &DistanceMatrix,
    samples: &[Sample],
    cfg: &KernelConfig,
) -> Result<SpatialWeightMatrix> {
    cfg.validate()?;
    check_labels(samples)?;
    let n = samples.len();
    if d.len() != n {
        return Err(Error::invalid(format!(
            "distance matrix covers {} points but {} samples were given",
            d.len(),
            n
        )));
    }
    let rows = par::map_range(n, |i| {
        let dist = d.row(i).to_vec();
        label_row_unchecked(i, &dist, samples, cfg).weight
    });
    let mut w = Array2::<f64>::zeros((n, n));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            w[[i, j]] = v;
        }
    }
    Ok(SpatialWeightMatrix { w })
}
