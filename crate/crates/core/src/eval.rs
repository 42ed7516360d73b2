//! Geo-localization as closed-world retrieval, plus spatial-structure
//! diagnostics of the learned embeddings.
//!
//! Queries are image embeddings, the gallery is the location-text embeddings
//! of the same split, and query `i`'s ground truth is gallery item `i`.
//!
//! * **Geo-Align**: mean over queries of the Spearman correlation between
//!   `sim(v_i, t_j)` and `-d_ij` over `j != i`.
//! * **SSI**: mean image-image cosine over pairs closer than `d_nbr` minus the
//!   mean over pairs at or beyond it, clipped to `[0, 1]`. Undefined when
//!   either pair set is empty.
//! * **City-Align**: fraction of samples whose nearest image-embedding
//!   neighbour (self excluded) is in the same city.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::geodesy::{distance_matrix, haversine_unchecked, DistanceMatrix, GeoPoint};
use crate::model::{embed_images, embed_locations, EncoderParams};
use crate::par;
use crate::trainer::prepare;

/// Descending by score, ties to the lower index.
fn rank_order(scores: ArrayView1<f64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx
}

/// Top-`k` gallery indices and scores per query by dot product.
pub fn retrieve(queries: ArrayView2<f64>, gallery: ArrayView2<f64>, k: usize) -> Result<Vec<Vec<(usize, f64)>>> {
    if k > gallery.nrows() {
        return Err(Error::invalid(format!("K = {k} exceeds gallery size {}", gallery.nrows())));
    }
    if queries.ncols() != gallery.ncols() {
        return Err(Error::invalid("query and gallery embeddings differ in width"));
    }
    let scores = queries.dot(&gallery.t());
    Ok(par::map_range(queries.nrows(), |q| {
        let row = scores.row(q);
        rank_order(row).into_iter().take(k).map(|j| (j, row[j])).collect()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoErrorSummary {
    /// Lower median of the per-query errors.
    pub median_m: f64,
    pub mean_m: f64,
}

/// Per-query distance between the top-1 gallery coordinate and the truth.
pub fn geolocation_errors(top1: &[usize], gallery: &[GeoPoint], truth: &[GeoPoint]) -> Result<Vec<f64>> {
    if top1.len() != truth.len() {
        return Err(Error::invalid("top-1 list and ground truth differ in length"));
    }
    top1.iter()
        .zip(truth)
        .map(|(&j, &t)| {
            let g = gallery
                .get(j)
                .ok_or_else(|| Error::invalid(format!("gallery index {j} out of range")))?;
            Ok(haversine_unchecked(*g, t))
        })
        .collect()
}

pub fn summarize_errors(errors: &[f64]) -> Result<GeoErrorSummary> {
    if errors.is_empty() {
        return Err(Error::invalid("no errors to summarize"));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(GeoErrorSummary {
        median_m: sorted[(sorted.len() - 1) / 2],
        mean_m: errors.iter().sum::<f64>() / errors.len() as f64,
    })
}

pub fn geolocation_error(top1: &[usize], gallery: &[GeoPoint], truth: &[GeoPoint]) -> Result<GeoErrorSummary> {
    summarize_errors(&geolocation_errors(top1, gallery, truth)?)
}

/// Fraction of queries whose true gallery index is among the first `k`
/// entries of their ranked list.
pub fn recall_at_k(ranked: &[Vec<usize>], truth: &[usize], k: usize) -> f64 {
    if ranked.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .zip(truth)
        .filter(|(list, t)| list.iter().take(k).any(|j| j == *t))
        .count();
    hits as f64 / ranked.len() as f64
}

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

/// Spearman rank correlation; 0 when either side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    pearson(&average_ranks(a), &average_ranks(b))
}

pub fn geo_align(sim: ArrayView2<f64>, dist: &DistanceMatrix) -> Result<f64> {
    let n = sim.nrows();
    if sim.ncols() < 3 {
        return Err(Error::invalid("Geo-Align needs at least 3 gallery items"));
    }
    if dist.len() != n || sim.ncols() != n {
        return Err(Error::invalid("similarity and distance matrices are not aligned"));
    }
    let per_query = par::map_range(n, |i| {
        let (s, d): (Vec<f64>, Vec<f64>) = (0..n)
            .filter(|&j| j != i)
            .map(|j| (sim[[i, j]], -dist.get(i, j)))
            .unzip();
        spearman(&s, &d)
    });
    Ok(per_query.iter().sum::<f64>() / n as f64)
}

/// Spatial smoothness of image embeddings; `None` when either the near or
/// the far pair set is empty.
pub fn ssi(v: ArrayView2<f64>, dist: &DistanceMatrix, d_nbr_m: f64) -> Option<f64> {
    let n = v.nrows();
    if dist.len() != n {
        return None;
    }
    let cos = v.dot(&v.t());
    let rows = par::map_range(n, |i| {
        let (mut sn, mut cn, mut sf, mut cf) = (0.0, 0usize, 0.0, 0usize);
        for j in i + 1..n {
            if dist.get(i, j) < d_nbr_m {
                sn += cos[[i, j]];
                cn += 1;
            } else {
                sf += cos[[i, j]];
                cf += 1;
            }
        }
        (sn, cn, sf, cf)
    });
    let (sn, cn, sf, cf) = rows
        .into_iter()
        .fold((0.0, 0, 0.0, 0), |a, r| (a.0 + r.0, a.1 + r.1, a.2 + r.2, a.3 + r.3));
    if cn == 0 || cf == 0 {
        return None;
    }
    Some((sn / cn as f64 - sf / cf as f64).clamp(0.0, 1.0))
}

pub fn city_align(v: ArrayView2<f64>, cities: &[String]) -> Result<f64> {
    let n = v.nrows();
    if n < 2 || cities.len() != n {
        return Err(Error::invalid("City-Align needs at least two labelled samples"));
    }
    let cos = v.dot(&v.t());
    let hits = par::map_range(n, |i| {
        let mut best: Option<(usize, f64)> = None;
        for j in (0..n).filter(|&j| j != i) {
            if best.is_none_or(|(_, s)| cos[[i, j]] > s) {
                best = Some((j, cos[[i, j]]));
            }
        }
        let (j, _) = best.expect("n >= 2");
        cities[i] == cities[j]
    });
    Ok(hits.iter().filter(|&&h| h).count() as f64 / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub recall_ks: Vec<usize>,
    pub d_nbr_m: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            recall_ks: vec![1, 5, 10],
            d_nbr_m: 1000.0,
        }
    }
}

/// Metric row for one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub n_queries: usize,
    pub med_ge_m: f64,
    pub mean_ge_m: f64,
    pub r_at_1: f64,
    pub recall_at: BTreeMap<String, f64>,
    pub geo_align: f64,
    /// `null` when the neighbour/far pair partition is degenerate.
    pub ssi: Option<f64>,
    pub city_align: f64,
    pub d_nbr_m: f64,
    pub median_convention: String,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// One line of the optional per-query output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub top1_id: String,
    pub error_m: f64,
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// 1-based rank of the paired location text.
    pub true_rank: usize,
}

pub fn write_query_results<W: Write>(rows: &[QueryResult], mut out: W) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<per-query>", e))?;
    }
    Ok(())
}

/// Embeds a split with `params` and computes every metric.
pub fn evaluate(params: &EncoderParams, split: &Dataset, cfg: &EvalConfig, label: &str) -> Result<(EvalReport, Vec<QueryResult>)> {
    let n = split.len();
    if n < 3 {
        return Err(Error::invalid("evaluation needs at least 3 samples"));
    }
    let model = params.config();
    if split.feature_dim() != Some(model.image_dim) {
        return Err(Error::invalid(format!(
            "dataset features have length {:?}, checkpoint expects {}",
            split.feature_dim(),
            model.image_dim
        )));
    }
    let prepared = prepare(split, &model)?;
    let v = embed_images(params, prepared.images.view())?;
    let t = embed_locations(params, &prepared.loc)?;
    evaluate_embeddings(&v, &t, split, cfg, label)
}

/// Metrics from precomputed embeddings (rows aligned with `split`).
pub fn evaluate_embeddings(
    v: &Array2<f64>,
    t: &Array2<f64>,
    split: &Dataset,
    cfg: &EvalConfig,
    label: &str,
) -> Result<(EvalReport, Vec<QueryResult>)> {
    let n = split.len();
    if v.nrows() != n || t.nrows() != n {
        return Err(Error::invalid("embedding rows do not match the split"));
    }
    let points = split.points();
    let dist = distance_matrix(&points)?;
    let sim = v.dot(&t.t());
    let ranked: Vec<Vec<usize>> = par::map_range(n, |q| rank_order(sim.row(q)));
    let truth: Vec<usize> = (0..n).collect();
    let top1: Vec<usize> = ranked.iter().map(|r| r[0]).collect();
    let errors = geolocation_errors(&top1, &points, &points)?;
    let summary = summarize_errors(&errors)?;

    let mut recall_at = BTreeMap::new();
    for &k in &cfg.recall_ks {
        if k == 0 || k > n {
            return Err(Error::invalid(format!("recall K = {k} outside [1, {n}]")));
        }
        recall_at.insert(k.to_string(), recall_at_k(&ranked, &truth, k));
    }
    let r_at_1 = recall_at_k(&ranked, &truth, 1);
    let cities: Vec<String> = split.samples.iter().map(|s| s.city.clone()).collect();

    let report = EvalReport {
        label: label.to_string(),
        n_queries: n,
        med_ge_m: summary.median_m,
        mean_ge_m: summary.mean_m,
        r_at_1,
        recall_at,
        geo_align: geo_align(sim.view(), &dist)?,
        ssi: ssi(v.view(), &dist, cfg.d_nbr_m),
        city_align: city_align(v.view(), &cities)?,
        d_nbr_m: cfg.d_nbr_m,
        median_convention: "lower".to_string(),
    };
    let rows = (0..n)
        .map(|q| QueryResult {
            query_id: split.samples[q].id.clone(),
            top1_id: split.samples[top1[q]].id.clone(),
            error_m: errors[q],
            lat_deg: points[q].lat_deg,
            lon_deg: points[q].lon_deg,
            true_rank: ranked[q].iter().position(|&j| j == q).expect("full ranking") + 1,
        })
        .collect();
    Ok((report, rows))
}
