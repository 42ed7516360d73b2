//! Contrastive objectives over a `B x B` logits matrix and their gradients
//! with respect to the logits.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::supervision::{check_row_stochastic, SpatialWeightMatrix};

/// Loss value together with `dloss/dlogits`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Array2<f64>,
}

/// Which retrieval directions enter the contrastive terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Direction {
    /// Image queries against location texts only.
    #[default]
    ImageToText,
    /// Average of image-to-text and text-to-image.
    Symmetric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Hard-label loss on the same logits; logged, never differentiated.
    pub l_clip: f64,
    pub l_sw: f64,
    pub l_fair: f64,
    pub l_total: f64,
    pub lambda_fair: f64,
}

fn check_square(logits: &Array2<f64>) -> Result<usize> {
    let (r, c) = logits.dim();
    if r != c || r == 0 {
        return Err(Error::invalid(format!("logits must be a non-empty square matrix, got {r}x{c}")));
    }
    Ok(r)
}

/// Row-wise softmax and log-softmax.
pub fn softmax_rows(logits: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut logp = logits.clone();
    for mut row in logp.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
        row.mapv_inplace(|x| x - lse);
    }
    (logp.mapv(f64::exp), logp)
}

/// Soft-target cross entropy in one direction; `targets` must be row-stochastic.
fn soft_ce(logits: &Array2<f64>, targets: &Array2<f64>) -> LossGrad {
    let b = logits.nrows() as f64;
    let (p, logp) = softmax_rows(logits);
    let value = -(targets * &logp).sum() / b;
    LossGrad {
        value,
        grad: (p - targets) / b,
    }
}

fn transpose_renormalized(w: &Array2<f64>) -> Array2<f64> {
    let mut wt = w.t().to_owned();
    for mut row in wt.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    wt
}

fn directed(logits: &Array2<f64>, targets: &Array2<f64>, dir: Direction) -> LossGrad {
    let fwd = soft_ce(logits, targets);
    match dir {
        Direction::ImageToText => fwd,
        Direction::Symmetric => {
            let lt = logits.t().to_owned();
            let back = soft_ce(&lt, &transpose_renormalized(targets));
            LossGrad {
                value: 0.5 * (fwd.value + back.value),
                grad: (fwd.grad + back.grad.t()) * 0.5,
            }
        }
    }
}

/// Hard-label InfoNCE: each query's positive is the text with the same index.
pub fn clip_loss(logits: &Array2<f64>) -> Result<LossGrad> {
    clip_loss_dir(logits, Direction::ImageToText)
}

pub fn clip_loss_dir(logits: &Array2<f64>, dir: Direction) -> Result<LossGrad> {
    let n = check_square(logits)?;
    Ok(directed(logits, &Array2::eye(n), dir))
}

/// Soft-label InfoNCE: cross entropy between softmax rows and label rows.
pub fn sw_loss(logits: &Array2<f64>, w: &SpatialWeightMatrix) -> Result<LossGrad> {
    sw_loss_dir(logits, w.as_array(), Direction::ImageToText)
}

/// Like [`sw_loss`] but takes a raw matrix, which is validated first.
pub fn sw_loss_dir(logits: &Array2<f64>, w: &Array2<f64>, dir: Direction) -> Result<LossGrad> {
    let n = check_square(logits)?;
    check_row_stochastic(w)?;
    if w.nrows() != n {
        return Err(Error::ContractViolation(format!(
            "labels are {}x{} but logits are {n}x{n}",
            w.nrows(),
            w.ncols()
        )));
    }
    Ok(directed(logits, w, dir))
}

/// Variance-style penalty on per-region mean ground-truth probability.
///
/// `perf_r` is the mean of `softmax(logits_i)[i]` over batch rows in region
/// `r`; the loss is `sum_r (perf_r - mean(perf))^2` over regions that occur
/// in the batch.
pub fn fair_loss(logits: &Array2<f64>, region_of: &[usize], n_regions: usize) -> Result<LossGrad> {
    if logits.nrows() == 0 || region_of.is_empty() {
        return Err(Error::invalid("fairness penalty on an empty batch"));
    }
    let b = check_square(logits)?;
    if region_of.len() != b {
        return Err(Error::invalid(format!("{} region ids for a batch of {b}", region_of.len())));
    }
    if let Some(&r) = region_of.iter().find(|&&r| r >= n_regions) {
        return Err(Error::invalid(format!("region id {r} outside [0, {n_regions})")));
    }
    let (p, _) = softmax_rows(logits);

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &r) in region_of.iter().enumerate() {
        members.entry(r).or_default().push(i);
    }
    let perf: BTreeMap<usize, f64> = members
        .iter()
        .map(|(&r, idx)| (r, idx.iter().map(|&i| p[[i, i]]).sum::<f64>() / idx.len() as f64))
        .collect();
    let mean = perf.values().sum::<f64>() / perf.len() as f64;
    let value: f64 = perf.values().map(|v| (v - mean).powi(2)).sum();

    // deviations sum to zero, so dL/dperf_r = 2 (perf_r - mean)
    let mut grad = Array2::zeros((b, b));
    for (r, idx) in &members {
        let g = 2.0 * (perf[r] - mean) / idx.len() as f64;
        for &i in idx {
            let pii = p[[i, i]];
            for j in 0..b {
                let delta = if i == j { 1.0 } else { 0.0 };
                grad[[i, j]] = g * pii * (delta - p[[i, j]]);
            }
        }
    }
    Ok(LossGrad { value, grad })
}

/// `l_sw + lambda_fair * l_fair`, plus `l_clip` as a diagnostic.
pub fn total_loss(
    logits: &Array2<f64>,
    w: &SpatialWeightMatrix,
    region_of: &[usize],
    n_regions: usize,
    lambda_fair: f64,
    dir: Direction,
) -> Result<(LossBreakdown, Array2<f64>)> {
    if !(lambda_fair.is_finite() && lambda_fair >= 0.0) {
        return Err(Error::invalid(format!("lambda_fair must be >= 0, got {lambda_fair}")));
    }
    let clip = clip_loss_dir(logits, dir)?;
    let sw = sw_loss_dir(logits, w.as_array(), dir)?;
    let fair = fair_loss(logits, region_of, n_regions)?;
    let grad = if lambda_fair == 0.0 {
        sw.grad
    } else {
        sw.grad + fair.grad * lambda_fair
    };
    let breakdown = LossBreakdown {
        l_clip: clip.value,
        l_sw: sw.value,
        l_fair: fair.value,
        l_total: sw.value + lambda_fair * fair.value,
        lambda_fair,
    };
    Ok((breakdown, grad))
}
