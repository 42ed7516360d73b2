//! Image and location encoders with a hand-written backward pass.
//!
//! Both encoders are two-layer MLPs (`tanh` hidden layer) whose outputs are
//! L2-normalized. The location encoder first turns its hashed token bag into
//! a dense vector by averaging rows of a learnable embedding table, then
//! appends the coordinate Fourier block.
//!
//! Logits are `exp(log_inv_tau) * v_i . t_j`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::locfeat::LocationFeature;

/// Below this pre-normalization norm the output is pinned to `e_0`.
pub const NORM_FLOOR: f64 = 1e-6;
pub const NORM_EPS: f64 = 1e-12;
pub const INV_TAU_MIN: f64 = 1.0;
pub const INV_TAU_MAX: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_dim: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub token_dim: usize,
    pub vocab_size: usize,
    pub fourier_freqs: usize,
    /// Keep all-digit caption tokens in the token block.
    #[serde(default)]
    pub numeric_tokens: bool,
}

impl ModelConfig {
    pub fn loc_input_dim(&self) -> usize {
        self.token_dim + 4 * self.fourier_freqs
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("image_dim", self.image_dim),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("token_dim", self.token_dim),
            ("fourier_freqs", self.fourier_freqs),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be >= 1")));
            }
        }
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocab_size must be >= 2"));
        }
        Ok(())
    }
}

/// How the optimizer should treat a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Embedding,
    Temperature,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// hidden x input
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    /// output x hidden
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Mlp {
    fn init(input: usize, hidden: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut uniform = |rows: usize, cols: usize| {
            let bound = 1.0 / (cols as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..=bound))
        };
        let w1 = uniform(hidden, input);
        let w2 = uniform(output, hidden);
        Mlp {
            w1,
            b1: Array1::zeros(hidden),
            w2,
            b2: Array1::zeros(output),
        }
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            w1: Array2::zeros(self.w1.raw_dim()),
            b1: Array1::zeros(self.b1.raw_dim()),
            w2: Array2::zeros(self.w2.raw_dim()),
            b2: Array1::zeros(self.b2.raw_dim()),
        }
    }

    fn input_dim(&self) -> usize {
        self.w1.ncols()
    }
}

/// Every trainable tensor of both encoders plus the temperature.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub image_head: Mlp,
    /// vocab_size x token_dim
    pub loc_embed: Array2<f64>,
    pub loc_head: Mlp,
    pub log_inv_tau: f64,
    /// Featurization switch carried along so evaluation matches training.
    pub numeric_tokens: bool,
    generation: u64,
}

/// Borrowed view of one named tensor.
pub struct TensorRef<'a> {
    pub name: &'static str,
    pub kind: ParamKind,
    pub dims: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: &'static str,
    pub kind: ParamKind,
    pub data: &'a mut [f64],
}

impl EncoderParams {
    /// Seeded initialization: `uniform(+-1/sqrt(fan_in))` weights, zero biases,
    /// `normal(0, 0.02)` token embeddings, temperature 0.07.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image_head = Mlp::init(cfg.image_dim, cfg.hidden_dim, cfg.embed_dim, &mut rng);
        let normal = Normal::new(0.0, 0.02).expect("valid std-dev");
        let loc_embed =
            Array2::from_shape_simple_fn((cfg.vocab_size, cfg.token_dim), || normal.sample(&mut rng));
        let loc_head = Mlp::init(cfg.loc_input_dim(), cfg.hidden_dim, cfg.embed_dim, &mut rng);
        Ok(EncoderParams {
            image_head,
            loc_embed,
            loc_head,
            log_inv_tau: (1.0f64 / 0.07).ln(),
            numeric_tokens: cfg.numeric_tokens,
            generation: 0,
        })
    }

    /// All-zero tensors with matching shapes (used for gradients).
    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            image_head: self.image_head.zeros_like(),
            loc_embed: Array2::zeros(self.loc_embed.raw_dim()),
            loc_head: self.loc_head.zeros_like(),
            log_inv_tau: 0.0,
            numeric_tokens: self.numeric_tokens,
            generation: 0,
        }
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            image_dim: self.image_head.w1.ncols(),
            hidden_dim: self.image_head.w1.nrows(),
            embed_dim: self.image_head.w2.nrows(),
            token_dim: self.loc_embed.ncols(),
            vocab_size: self.loc_embed.nrows(),
            fourier_freqs: (self.loc_head.w1.ncols() - self.loc_embed.ncols()) / 4,
            numeric_tokens: self.numeric_tokens,
        }
    }

    pub fn inv_tau(&self) -> f64 {
        self.log_inv_tau.exp()
    }

    /// Clamps `exp(log_inv_tau)` into `[INV_TAU_MIN, INV_TAU_MAX]`.
    pub fn clamp_temperature(&mut self) {
        self.log_inv_tau = self
            .log_inv_tau
            .clamp(INV_TAU_MIN.ln(), INV_TAU_MAX.ln());
        self.generation += 1;
    }

    /// Bumped on every mutable access; forward caches remember it.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        fn t<'a>(name: &'static str, kind: ParamKind, dims: &[usize], data: &'a [f64]) -> TensorRef<'a> {
            TensorRef {
                name,
                kind,
                dims: dims.to_vec(),
                data,
            }
        }
        use ParamKind::*;
        let (ih, lh) = (&self.image_head, &self.loc_head);
        vec![
            t("image.w1", Weight, ih.w1.shape(), ih.w1.as_slice().expect("contiguous")),
            t("image.b1", Bias, ih.b1.shape(), ih.b1.as_slice().expect("contiguous")),
            t("image.w2", Weight, ih.w2.shape(), ih.w2.as_slice().expect("contiguous")),
            t("image.b2", Bias, ih.b2.shape(), ih.b2.as_slice().expect("contiguous")),
            t("loc.embed", Embedding, self.loc_embed.shape(), self.loc_embed.as_slice().expect("contiguous")),
            t("loc.w1", Weight, lh.w1.shape(), lh.w1.as_slice().expect("contiguous")),
            t("loc.b1", Bias, lh.b1.shape(), lh.b1.as_slice().expect("contiguous")),
            t("loc.w2", Weight, lh.w2.shape(), lh.w2.as_slice().expect("contiguous")),
            t("loc.b2", Bias, lh.b2.shape(), lh.b2.as_slice().expect("contiguous")),
            t("log_inv_tau", Temperature, &[], std::slice::from_ref(&self.log_inv_tau)),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        use ParamKind::*;
        self.generation += 1;
        let (ih, lh) = (&mut self.image_head, &mut self.loc_head);
        fn m<'a>(name: &'static str, kind: ParamKind, data: Option<&'a mut [f64]>) -> TensorMut<'a> {
            TensorMut {
                name,
                kind,
                data: data.expect("contiguous"),
            }
        }
        vec![
            m("image.w1", Weight, ih.w1.as_slice_mut()),
            m("image.b1", Bias, ih.b1.as_slice_mut()),
            m("image.w2", Weight, ih.w2.as_slice_mut()),
            m("image.b2", Bias, ih.b2.as_slice_mut()),
            m("loc.embed", Embedding, self.loc_embed.as_slice_mut()),
            m("loc.w1", Weight, lh.w1.as_slice_mut()),
            m("loc.b1", Bias, lh.b1.as_slice_mut()),
            m("loc.w2", Weight, lh.w2.as_slice_mut()),
            m("loc.b2", Bias, lh.b2.as_slice_mut()),
            m("log_inv_tau", Temperature, Some(std::slice::from_mut(&mut self.log_inv_tau))),
        ]
    }

    /// Rebuilds parameters from named tensors (checkpoint loading).
    pub fn from_tensors(cfg: &ModelConfig, tensors: &[(String, Vec<usize>, Vec<f64>)]) -> Result<Self> {
        let mut p = EncoderParams::init(cfg, 0)?;
        let expected: Vec<(&'static str, Vec<usize>)> =
            p.tensors().into_iter().map(|t| (t.name, t.dims)).collect();
        if tensors.len() != expected.len() {
            return Err(Error::invalid(format!(
                "expected {} tensors, found {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((name, dims), dst) in expected.iter().zip(p.tensors_mut()) {
            let (src_name, src_dims, data) = tensors
                .iter()
                .find(|t| t.0 == *name)
                .ok_or_else(|| Error::invalid(format!("missing tensor `{name}`")))?;
            if src_dims != dims || data.len() != dst.data.len() {
                return Err(Error::invalid(format!(
                    "tensor `{src_name}` has dims {src_dims:?}, expected {dims:?}"
                )));
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("tensor `{src_name}` has non-finite values")));
            }
            dst.data.copy_from_slice(data);
        }
        Ok(p)
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Unit-norm image (`v`) and location (`t`) embeddings, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch {
    pub v: Array2<f64>,
    pub t: Array2<f64>,
}

struct HeadCache {
    input: Array2<f64>,
    hidden: Array2<f64>,
    pre_norm: Array2<f64>,
}

/// Activations kept from `forward` for `backward`.
pub struct ForwardCache {
    generation: u64,
    image: HeadCache,
    loc: HeadCache,
    loc_tokens: Vec<Vec<(usize, f64)>>,
    emb: EmbeddingBatch,
    inv_tau: f64,
}

impl ForwardCache {
    pub fn embeddings(&self) -> &EmbeddingBatch {
        &self.emb
    }
}

fn normalize_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let n = row.dot(&row).sqrt();
        if n <= NORM_FLOOR {
            row.fill(0.0);
            row[0] = 1.0;
        } else {
            row /= n + NORM_EPS;
        }
    }
    out
}

/// Backpropagates through `u = z / (|z| + eps)` row by row.
fn normalize_rows_backward(z: &Array2<f64>, du: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(z.raw_dim());
    for ((zr, gr), mut out) in z.rows().into_iter().zip(du.rows()).zip(dz.rows_mut()) {
        let n = zr.dot(&zr).sqrt();
        if n <= NORM_FLOOR {
            continue;
        }
        let d = n + NORM_EPS;
        let zg = zr.dot(&gr);
        out.assign(&(&gr / d - &zr * (zg / (n * d * d))));
    }
    dz
}

fn head_forward(mlp: &Mlp, input: Array2<f64>) -> (Array2<f64>, HeadCache) {
    let mut hidden = input.dot(&mlp.w1.t()) + &mlp.b1;
    hidden.mapv_inplace(f64::tanh);
    let pre_norm = hidden.dot(&mlp.w2.t()) + &mlp.b2;
    let out = normalize_rows(&pre_norm);
    (
        out,
        HeadCache {
            input,
            hidden,
            pre_norm,
        },
    )
}

/// Accumulates parameter gradients into `grad` and returns d/d(input).
fn head_backward(mlp: &Mlp, cache: &HeadCache, d_out: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
    let dz = normalize_rows_backward(&cache.pre_norm, d_out);
    grad.w2 += &dz.t().dot(&cache.hidden);
    grad.b2 += &dz.sum_axis(Axis(0));
    let dh = dz.dot(&mlp.w2);
    let da = dh * cache.hidden.mapv(|h| 1.0 - h * h);
    grad.w1 += &da.t().dot(&cache.input);
    grad.b1 += &da.sum_axis(Axis(0));
    da.dot(&mlp.w1)
}

fn check_image_dims(params: &EncoderParams, image_feats: &ArrayView2<f64>) -> Result<()> {
    let want = params.image_head.input_dim();
    if image_feats.ncols() != want {
        return Err(Error::invalid(format!(
            "image features have {} columns, encoder expects {want}",
            image_feats.ncols()
        )));
    }
    Ok(())
}

fn loc_input(params: &EncoderParams, feats: &[LocationFeature]) -> Result<Array2<f64>> {
    let token_dim = params.loc_embed.ncols();
    let vocab = params.loc_embed.nrows();
    let want = params.loc_head.input_dim();
    let mut x = Array2::zeros((feats.len(), want));
    for (b, f) in feats.iter().enumerate() {
        if f.input_dim(token_dim) != want {
            return Err(Error::invalid(format!(
                "location feature {b} has input dim {}, encoder expects {want}",
                f.input_dim(token_dim)
            )));
        }
        let mut row = x.row_mut(b);
        for &(idx, w) in &f.tokens {
            if idx >= vocab {
                return Err(Error::invalid(format!("token index {idx} outside vocabulary of {vocab}")));
            }
            row.slice_mut(s![..token_dim]).scaled_add(w, &params.loc_embed.row(idx));
        }
        for (dst, &v) in row.slice_mut(s![token_dim..]).iter_mut().zip(&f.fourier) {
            *dst = v;
        }
    }
    Ok(x)
}

/// Unit-norm image embeddings for a feature matrix.
pub fn embed_images(params: &EncoderParams, image_feats: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_image_dims(params, &image_feats)?;
    Ok(head_forward(&params.image_head, image_feats.to_owned()).0)
}

/// Unit-norm location embeddings.
pub fn embed_locations(params: &EncoderParams, feats: &[LocationFeature]) -> Result<Array2<f64>> {
    let x = loc_input(params, feats)?;
    Ok(head_forward(&params.loc_head, x).0)
}

pub fn forward(
    params: &EncoderParams,
    image_feats: ArrayView2<f64>,
    loc_feats: &[LocationFeature],
) -> Result<(EmbeddingBatch, ForwardCache)> {
    let b = image_feats.nrows();
    if b == 0 {
        return Err(Error::invalid("forward on an empty batch"));
    }
    if loc_feats.len() != b {
        return Err(Error::invalid(format!(
            "{b} image rows but {} location features",
            loc_feats.len()
        )));
    }
    check_image_dims(params, &image_feats)?;
    let (v, image) = head_forward(&params.image_head, image_feats.to_owned());
    let (t, loc) = head_forward(&params.loc_head, loc_input(params, loc_feats)?);
    let emb = EmbeddingBatch { v, t };
    let cache = ForwardCache {
        generation: params.generation,
        image,
        loc,
        loc_tokens: loc_feats.iter().map(|f| f.tokens.clone()).collect(),
        emb: emb.clone(),
        inv_tau: params.inv_tau(),
    };
    Ok((emb, cache))
}

/// `logits[i][j] = exp(log_inv_tau) * v_i . t_j`.
pub fn similarity(e: &EmbeddingBatch, params: &EncoderParams) -> Array2<f64> {
    e.v.dot(&e.t.t()) * params.inv_tau()
}

/// Exact gradients of a loss with respect to every parameter, given
/// `dloss/dlogits` for the logits produced from `cache`.
pub fn backward(params: &EncoderParams, cache: &ForwardCache, dlogits: &Array2<f64>) -> Result<EncoderParams> {
    if cache.generation != params.generation {
        return Err(Error::ContractViolation(
            "parameters changed since the forward pass".into(),
        ));
    }
    let b = cache.emb.v.nrows();
    if dlogits.dim() != (b, cache.emb.t.nrows()) {
        return Err(Error::ContractViolation(format!(
            "dlogits is {:?}, forward produced a {b}x{} batch",
            dlogits.dim(),
            cache.emb.t.nrows()
        )));
    }
    let scale = cache.inv_tau;
    let (v, t) = (&cache.emb.v, &cache.emb.t);
    let mut grad = params.zeros_like();

    let cos = v.dot(&t.t());
    grad.log_inv_tau = (dlogits * &cos).sum() * scale;

    let dv = dlogits.dot(t) * scale;
    let dt = dlogits.t().dot(v) * scale;

    head_backward(&params.image_head, &cache.image, &dv, &mut grad.image_head);
    let dx = head_backward(&params.loc_head, &cache.loc, &dt, &mut grad.loc_head);

    let token_dim = params.loc_embed.ncols();
    for (row, tokens) in dx.rows().into_iter().zip(&cache.loc_tokens) {
        let d_tok = row.slice(s![..token_dim]);
        for &(idx, w) in tokens {
            grad.loc_embed.row_mut(idx).scaled_add(w, &d_tok);
        }
    }
    Ok(grad)
}
