//! Location captions and their numeric featurization.
//!
//! A sample's position is written out as a caption,
//! `Street: {s}, City: {c}, Country: {k}. Lat: {lat}, Lon: {lon}.`, and the
//! caption becomes the input of the location encoder in two parts: a hashed
//! bag of caption tokens (looked up in the encoder's embedding table and
//! averaged) and multi-frequency sin/cos features of the coordinates.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::geodesy::GeoPoint;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn fnv1a64(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(FNV_PRIME)
    })
}

/// Lowercase alphanumeric runs, in order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LocationCaption {
    pub text: String,
    pub tokens: Vec<String>,
}

impl LocationCaption {
    pub fn new(text: String) -> Self {
        let tokens = tokenize(&text);
        LocationCaption { text, tokens }
    }
}

pub fn caption_text(street: &str, city: &str, country: &str, point: GeoPoint) -> String {
    format!(
        "Street: {street}, City: {city}, Country: {country}. Lat: {:.5}, Lon: {:.5}.",
        point.lat_deg, point.lon_deg
    )
}

pub fn render_caption(sample: &Sample) -> Result<LocationCaption> {
    for (name, v) in [
        ("street", &sample.street),
        ("city", &sample.city),
        ("country", &sample.country),
    ] {
        if v.is_empty() {
            return Err(Error::invalid(format!("sample `{}` has an empty {name}", sample.id)));
        }
    }
    Ok(LocationCaption::new(caption_text(
        &sample.street,
        &sample.city,
        &sample.country,
        sample.point,
    )))
}

/// Encoder input for one location caption.
///
/// `tokens` holds `(vocab index, weight)` pairs sorted by index with weights
/// summing to one; the dense token block is `sum_k weight_k * table[index_k]`.
/// `fourier` holds `4 * M` coordinate features.
#[derive(Debug, Clone, PartialEq)]
pub struct LocationFeature {
    pub tokens: Vec<(usize, f64)>,
    pub fourier: Vec<f64>,
}

impl LocationFeature {
    /// Length of the dense vector the encoder actually consumes.
    pub fn input_dim(&self, token_dim: usize) -> usize {
        token_dim + self.fourier.len()
    }
}

/// `[sin(2^m pi lat), cos(2^m pi lat), sin(2^m pi lon), cos(2^m pi lon)]`
/// for `m = 0..freqs`, with angles in radians.
pub fn fourier_features(point: GeoPoint, freqs: usize) -> Vec<f64> {
    let (lat, lon) = (point.lat_rad(), point.lon_rad());
    let mut out = Vec::with_capacity(4 * freqs);
    let mut scale = PI;
    for _ in 0..freqs {
        let (sa, ca) = (scale * lat).sin_cos();
        let (so, co) = (scale * lon).sin_cos();
        out.extend_from_slice(&[sa, ca, so, co]);
        scale *= 2.0;
    }
    out
}

/// Features from every caption token plus the Fourier block.
pub fn featurize(
    caption: &LocationCaption,
    point: GeoPoint,
    vocab_size: usize,
    freqs: usize,
) -> Result<LocationFeature> {
    featurize_with(caption, point, vocab_size, freqs, true)
}

/// True for tokens made only of digits, such as the coordinate parts
/// `55` and `86420`.
pub fn is_numeric(token: &str) -> bool {
    !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit())
}

/// Like [`featurize`], optionally leaving numeric tokens out of the token
/// block. The coordinates still reach the encoder through the Fourier block
/// at full precision; their digit runs are unique per sample, so a hashed
/// bag of tokens can only memorize them.
pub fn featurize_with(
    caption: &LocationCaption,
    point: GeoPoint,
    vocab_size: usize,
    freqs: usize,
    numeric_tokens: bool,
) -> Result<LocationFeature> {
    if vocab_size < 2 {
        return Err(Error::invalid(format!("vocab_size must be >= 2, got {vocab_size}")));
    }
    if freqs < 1 {
        return Err(Error::invalid("at least one Fourier frequency is required"));
    }
    let mut ids: Vec<usize> = caption
        .tokens
        .iter()
        .filter(|t| numeric_tokens || !is_numeric(t))
        .map(|t| (fnv1a64(t) % vocab_size as u64) as usize)
        .collect();
    ids.sort_unstable();
    let total = ids.len() as f64;
    let mut tokens: Vec<(usize, f64)> = Vec::new();
    for id in ids {
        match tokens.last_mut() {
            Some((last, w)) if *last == id => *w += 1.0,
            _ => tokens.push((id, 1.0)),
        }
    }
    for (_, w) in &mut tokens {
        *w /= total;
    }
    Ok(LocationFeature {
        tokens,
        fourier: fourier_features(point, freqs),
    })
}

/// Captions and features for a whole sample list.
pub fn featurize_samples(
    samples: &[Sample],
    vocab_size: usize,
    freqs: usize,
    numeric_tokens: bool,
) -> Result<Vec<LocationFeature>> {
    let out = crate::par::map_slice(samples, |s| {
        render_caption(s).and_then(|c| featurize_with(&c, s.point, vocab_size, freqs, numeric_tokens))
    });
    out.into_iter().collect()
}
