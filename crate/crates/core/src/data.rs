//! Samples, the synthetic geo-world and the line-delimited dataset format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"id":"00-01-007","lat_deg":55.86,"lon_deg":-4.25,"street":"High Street",
//!  "city":"Glasgow","country":"UK","region_id":0,"image_feature":[...],
//!  "caption":"Street: High Street, City: Glasgow, ..."}
//! ```
//!
//! `caption` is written for inspection and ignored on load. Files produced by
//! other tools (e.g. exported CLIP image features) load as long as they follow
//! the same schema.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesy::{offset_m, GeoPoint, EARTH_RADIUS_M};
use crate::locfeat::caption_text;

/// Bounding box the generator places cities in: (lat_min, lat_max, lon_min, lon_max).
pub const WORLD_BBOX: (f64, f64, f64, f64) = (50.0, 58.0, -6.0, 2.0);

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub point: GeoPoint,
    pub street: String,
    pub city: String,
    pub country: String,
    pub region_id: usize,
    pub image_feature: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>) -> Self {
        Dataset { samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.image_feature.len())
    }

    /// One past the largest region id.
    pub fn n_regions(&self) -> usize {
        self.samples.iter().map(|s| s.region_id + 1).max().unwrap_or(0)
    }

    pub fn points(&self) -> Vec<GeoPoint> {
        self.samples.iter().map(|s| s.point).collect()
    }

    /// Latitude/longitude extent as (lat_min, lat_max, lon_min, lon_max).
    pub fn bounding_box(&self) -> Option<(f64, f64, f64, f64)> {
        let first = self.samples.first()?.point;
        let init = (first.lat_deg, first.lat_deg, first.lon_deg, first.lon_deg);
        Some(self.samples.iter().fold(init, |b, s| {
            (
                b.0.min(s.point.lat_deg),
                b.1.max(s.point.lat_deg),
                b.2.min(s.point.lon_deg),
                b.3.max(s.point.lon_deg),
            )
        }))
    }

    /// Checks the dataset-level invariants: unique ids, uniform finite
    /// features, valid coordinates.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let dim = self.feature_dim();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::invalid(format!("duplicate sample id `{}`", s.id)));
            }
            s.point.validate()?;
            if Some(s.image_feature.len()) != dim {
                return Err(Error::invalid(format!("sample `{}` has a feature of a different length", s.id)));
            }
            if s.image_feature.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("sample `{}` has a non-finite feature", s.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub n_cities: usize,
    pub streets_per_city: usize,
    pub samples_per_street: usize,
    /// Std-dev of street centers around their city center, meters.
    pub city_spread_m: f64,
    /// Std-dev of samples around their street center, meters.
    pub street_spread_m: f64,
    pub feature_dim: usize,
    /// Leading feature dimensions that depend on position.
    pub signal_dim: usize,
    /// Std-dev of per-sample noise added to the signal dimensions.
    pub noise_sigma: f64,
    /// Std-dev of the position-independent dimensions.
    pub nuisance_sigma: f64,
    /// Scale of a random vector shared by every feature, like the common
    /// direction pretrained image embeddings tend to occupy.
    pub feature_offset: f64,
    /// Shortest and longest length scale of the position signal, meters.
    pub min_lengthscale_m: f64,
    pub max_lengthscale_m: f64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            n_cities: 8,
            streets_per_city: 1,
            samples_per_street: 100,
            city_spread_m: 1500.0,
            street_spread_m: 300.0,
            feature_dim: 64,
            signal_dim: 32,
            noise_sigma: 0.005,
            nuisance_sigma: 0.5,
            feature_offset: 2.0,
            min_lengthscale_m: 500.0,
            max_lengthscale_m: 100_000.0,
            seed: 7,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_cities == 0 || self.streets_per_city == 0 || self.samples_per_street == 0 {
            return Err(Error::invalid("city, street and sample counts must be >= 1"));
        }
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !(positive(self.city_spread_m) && positive(self.street_spread_m)) {
            return Err(Error::invalid("spreads must be finite and > 0"));
        }
        if self.feature_dim == 0 || self.signal_dim == 0 || self.signal_dim > self.feature_dim {
            return Err(Error::invalid("need 1 <= signal_dim <= feature_dim"));
        }
        if !(non_negative(self.noise_sigma) && non_negative(self.nuisance_sigma) && non_negative(self.feature_offset)) {
            return Err(Error::invalid("noise_sigma, nuisance_sigma and feature_offset must be finite and >= 0"));
        }
        if !(positive(self.min_lengthscale_m) && positive(self.max_lengthscale_m))
            || self.min_lengthscale_m > self.max_lengthscale_m
        {
            return Err(Error::invalid("need 0 < min_lengthscale_m <= max_lengthscale_m"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.n_cities * self.streets_per_city * self.samples_per_street
    }
}

const CITY_NAMES: [&str; 12] = [
    "Glasgow", "Edinburgh", "Manchester", "Leeds", "Bristol", "Cardiff", "Newcastle", "Liverpool",
    "Sheffield", "Nottingham", "Aberdeen", "Norwich",
];

const STREET_NAMES: [&str; 16] = [
    "High Street", "Station Road", "Church Lane", "Mill Road", "Victoria Street", "Park Avenue",
    "King Street", "Queen Street", "London Road", "Castle Street", "Bridge Street", "Market Place",
    "North Road", "West End", "Albert Road", "George Street",
];

/// Random Fourier expansion of planar coordinates into `dim` smooth features.
/// Length scales are log-spaced from `min_len_m` to `max_len_m`.
struct SmoothMap {
    freqs: Vec<(f64, f64)>,
    phases: Vec<f64>,
    origin: GeoPoint,
}

impl SmoothMap {
    fn new(dim: usize, min_len_m: f64, max_len_m: f64, origin: GeoPoint, rng: &mut ChaCha8Rng) -> Self {
        let mut freqs = Vec::with_capacity(dim);
        let mut phases = Vec::with_capacity(dim);
        for k in 0..dim {
            let t = if dim > 1 { k as f64 / (dim - 1) as f64 } else { 0.0 };
            let len = min_len_m * (max_len_m / min_len_m).powf(t);
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            freqs.push((a / len, b / len));
            phases.push(rng.random_range(0.0..2.0 * PI));
        }
        SmoothMap { freqs, phases, origin }
    }

    fn eval(&self, p: GeoPoint) -> impl Iterator<Item = f64> + '_ {
        let east = (p.lon_deg - self.origin.lon_deg).to_radians() * EARTH_RADIUS_M * self.origin.lat_rad().cos();
        let north = (p.lat_deg - self.origin.lat_deg).to_radians() * EARTH_RADIUS_M;
        self.freqs
            .iter()
            .zip(&self.phases)
            .map(move |(&(fe, fn_), &ph)| (fe * east + fn_ * north + ph).cos())
    }
}

/// Deterministic synthetic world: cities in a UK-like box, streets around
/// cities, samples around streets, and image features that are a smooth
/// function of position plus noise, padded with pure-noise dimensions, all
/// shifted by one shared offset vector. Region id equals city index.
///
/// The defaults put one tight cluster of 100 samples in each of 8 cities.
/// Train-set neighbours then sit well inside the default kernel width, and
/// the nuisance block is loud enough that one-hot training can separate
/// them only by memorizing it.
pub fn generate_world(cfg: &WorldConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (lat0, lat1, lon0, lon1) = WORLD_BBOX;
    let origin = GeoPoint::new((lat0 + lat1) / 2.0, (lon0 + lon1) / 2.0)?;
    let map = SmoothMap::new(cfg.signal_dim, cfg.min_lengthscale_m, cfg.max_lengthscale_m, origin, &mut rng);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let nuisance = Normal::new(0.0, cfg.nuisance_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let mut offset_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    offset_rng.set_stream(1);
    let offset: Vec<f64> = (0..cfg.feature_dim)
        .map(|_| cfg.feature_offset * offset_rng.sample::<f64, _>(StandardNormal))
        .collect();

    // keep cities one degree inside the box so jittered samples stay in it
    let mut samples = Vec::with_capacity(cfg.n_samples());
    for c in 0..cfg.n_cities {
        let center = GeoPoint::new(rng.random_range(lat0 + 1.0..lat1 - 1.0), rng.random_range(lon0 + 1.0..lon1 - 1.0))?;
        let city = CITY_NAMES
            .get(c)
            .map(|s| s.to_string())
            .unwrap_or_else(|| format!("City {c}"));
        let mut streets: Vec<&str> = STREET_NAMES.to_vec();
        streets.shuffle(&mut rng);
        for s in 0..cfg.streets_per_city {
            let street = streets
                .get(s)
                .map(|s| s.to_string())
                .unwrap_or_else(|| format!("Street {s}"));
            let e: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.city_spread_m;
            let n: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.city_spread_m;
            let street_center = offset_m(center, e, n);
            for k in 0..cfg.samples_per_street {
                let e: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.street_spread_m;
                let n: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.street_spread_m;
                let p = offset_m(street_center, e, n);
                let point = GeoPoint::new(p.lat_deg.clamp(lat0, lat1), p.lon_deg.clamp(lon0, lon1))?;
                let mut image_feature: Vec<f64> = map.eval(point).collect();
                for v in &mut image_feature {
                    *v += noise.sample(&mut rng);
                }
                image_feature.extend((cfg.signal_dim..cfg.feature_dim).map(|_| nuisance.sample(&mut rng)));
                for (v, o) in image_feature.iter_mut().zip(&offset) {
                    *v += o;
                }
                samples.push(Sample {
                    id: format!("{c:02}-{s:02}-{k:03}"),
                    point,
                    street: street.clone(),
                    city: city.clone(),
                    country: "UK".to_string(),
                    region_id: c,
                    image_feature,
                });
            }
        }
    }
    Ok(Dataset::new(samples))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    lat_deg: f64,
    lon_deg: f64,
    street: String,
    city: String,
    country: String,
    region_id: usize,
    image_feature: Vec<f64>,
    #[serde(default)]
    caption: Option<String>,
}

/// Serializes to the line-delimited format. Floats use the shortest
/// round-trip representation, so `load(save(x)) == x`.
pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for s in &ds.samples {
        let rec = Record {
            id: s.id.clone(),
            lat_deg: s.point.lat_deg,
            lon_deg: s.point.lon_deg,
            street: s.street.clone(),
            city: s.city.clone(),
            country: s.country.clone(),
            region_id: s.region_id,
            image_feature: s.image_feature.clone(),
            caption: Some(caption_text(&s.street, &s.city, &s.country, s.point)),
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n").map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(ds, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Best guess at which key a parse error at byte `col` (1-based) belongs to.
fn field_at(line: &str, col: usize) -> String {
    let upto = &line[..col.saturating_sub(1).min(line.len())];
    let mut best = None;
    let mut rest = upto;
    while let Some(pos) = rest.rfind("\":") {
        let head = &rest[..pos];
        if let Some(start) = head.rfind('"') {
            best = Some(head[start + 1..].to_string());
            break;
        }
        rest = head;
    }
    best.unwrap_or_else(|| "<record>".to_string())
}

fn parse_record(path: &Path, lineno: usize, line: &str) -> Result<Sample> {
    let err = |field: &str, message: String| Error::Parse {
        path: path.to_path_buf(),
        line: lineno,
        field: field.to_string(),
        message,
    };
    let rec: Record = serde_json::from_str(line).map_err(|e| {
        let msg = e.to_string();
        // serde names missing/unknown fields in its message
        let field = ["missing field `", "unknown field `"]
            .iter()
            .find_map(|pat| {
                msg.find(pat).map(|i| {
                    let tail = &msg[i + pat.len()..];
                    tail[..tail.find('`').unwrap_or(tail.len())].to_string()
                })
            })
            .unwrap_or_else(|| field_at(line, e.column()));
        err(&field, msg)
    })?;
    if !rec.lat_deg.is_finite() || !(-90.0..=90.0).contains(&rec.lat_deg) {
        return Err(err("lat_deg", format!("latitude {} outside [-90, 90]", rec.lat_deg)));
    }
    if !rec.lon_deg.is_finite() || !(-180.0..=180.0).contains(&rec.lon_deg) {
        return Err(err("lon_deg", format!("longitude {} outside [-180, 180]", rec.lon_deg)));
    }
    for (name, v) in [("id", &rec.id), ("street", &rec.street), ("city", &rec.city), ("country", &rec.country)] {
        if v.is_empty() {
            return Err(err(name, "must not be empty".into()));
        }
    }
    if rec.image_feature.is_empty() {
        return Err(err("image_feature", "must not be empty".into()));
    }
    if rec.image_feature.iter().any(|v| !v.is_finite()) {
        return Err(err("image_feature", "contains a non-finite value".into()));
    }
    Ok(Sample {
        id: rec.id,
        point: GeoPoint {
            lat_deg: rec.lat_deg,
            lon_deg: rec.lon_deg,
        },
        street: rec.street,
        city: rec.city,
        country: rec.country,
        region_id: rec.region_id,
        image_feature: rec.image_feature,
    })
}

/// Parses line-delimited records. `path` is only used in error messages.
pub fn parse_dataset(text: &str, path: &Path) -> Result<Dataset> {
    let mut samples: Vec<Sample> = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let s = parse_record(path, lineno, line)?;
        if let Some(first) = samples.first() {
            if first.image_feature.len() != s.image_feature.len() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: lineno,
                    field: "image_feature".into(),
                    message: format!(
                        "length {} differs from the dataset's {}",
                        s.image_feature.len(),
                        first.image_feature.len()
                    ),
                });
            }
        }
        if !seen.insert(s.id.clone()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: lineno,
                field: "id".into(),
                message: format!("duplicate id `{}`", s.id),
            });
        }
        samples.push(s);
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{}: dataset is empty", path.display())));
    }
    Ok(Dataset::new(samples))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path)
}

/// Seeded split stratified by city. Every city with at least two samples
/// lands in both parts; single-sample cities go to train. Both parts keep
/// the dataset's original order.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::invalid(format!("train_frac must be in (0, 1), got {train_frac}")));
    }
    let mut by_city: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        by_city.entry(s.city.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; ds.len()];
    for (city, mut idx) in by_city {
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = if n == 1 {
            log::warn!("city `{city}` has a single sample; assigning it to train");
            1
        } else {
            ((train_frac * n as f64).round() as usize).clamp(1, n - 1)
        };
        for &i in &idx[..n_train] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in ds.samples.iter().zip(in_train) {
        if t {
            train.push(s.clone());
        } else {
            test.push(s.clone());
        }
    }
    Ok((Dataset::new(train), Dataset::new(test)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> WorldConfig {
        WorldConfig {
            n_cities: 3,
            streets_per_city: 2,
            samples_per_street: 5,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn counts_and_regions() {
        let ds = generate_world(&WorldConfig::default()).unwrap();
        assert_eq!(ds.len(), 800);
        assert_eq!(ds.n_regions(), 8);
        assert_eq!(ds.feature_dim(), Some(64));
        ds.validate().unwrap();
        let (a, b, c, d) = WORLD_BBOX;
        for s in &ds.samples {
            assert!(s.point.lat_deg >= a && s.point.lat_deg <= b);
            assert!(s.point.lon_deg >= c && s.point.lon_deg <= d);
        }
    }

    #[test]
    fn smooth_map_is_a_bounded_function_of_position() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let origin = GeoPoint::new(54.0, -2.0).unwrap();
        let map = SmoothMap::new(8, 500.0, 100_000.0, origin, &mut rng);
        let p = offset_m(origin, 1234.0, -567.0);
        let a: Vec<f64> = map.eval(p).collect();
        assert_eq!(a, map.eval(p).collect::<Vec<_>>());
        assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
        // nearby points get nearby features, distant ones do not
        let near: Vec<f64> = map.eval(offset_m(p, 5.0, 0.0)).collect();
        let gap = |b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(gap(&near) < 0.05);
        let far: Vec<f64> = map.eval(offset_m(p, 50_000.0, 20_000.0)).collect();
        assert!(gap(&far) > 0.2);
    }

    #[test]
    fn noiseless_features_are_signal_plus_shared_offset() {
        let cfg = WorldConfig {
            noise_sigma: 0.0,
            nuisance_sigma: 0.0,
            ..small()
        };
        let ds = generate_world(&cfg).unwrap();
        let a = &ds.samples[0].image_feature;
        for s in &ds.samples[1..] {
            // the nuisance block carries nothing but the offset
            assert_eq!(&s.image_feature[cfg.signal_dim..], &a[cfg.signal_dim..]);
        }
        let no_offset = generate_world(&WorldConfig {
            feature_offset: 0.0,
            ..cfg.clone()
        })
        .unwrap();
        assert!(no_offset.samples[0].image_feature[..cfg.signal_dim]
            .iter()
            .all(|v| (-1.0..=1.0).contains(v)));
        assert!(no_offset.samples[0].image_feature[cfg.signal_dim..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(&small()).unwrap();
        let b = generate_world(&small()).unwrap();
        assert_eq!(a, b);
        let mut other = small();
        other.seed += 1;
        assert_ne!(a, generate_world(&other).unwrap());
    }

    #[test]
    fn rejects_bad_world_config() {
        let mut c = small();
        c.signal_dim = 100;
        assert!(generate_world(&c).is_err());
        let mut c = small();
        c.n_cities = 0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.street_spread_m = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn roundtrip_in_memory() {
        let ds = generate_world(&small()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = parse_dataset(std::str::from_utf8(&buf).unwrap(), Path::new("mem")).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn malformed_lines_name_line_and_field() {
        let ds = generate_world(&small()).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();

        let pristine = lines.clone();
        let lat = format!("\"lat_deg\":{}", ds.samples[2].point.lat_deg);
        lines[2] = lines[2].replace(&lat, "\"lat_deg\":NaN");
        let err = parse_dataset(&lines.join("\n"), Path::new("f.jsonl")).unwrap_err();
        match err {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 3);
                assert_eq!(field, "lat_deg");
            }
            other => panic!("unexpected {other:?}"),
        }

        let lines = pristine;
        let mut l2 = lines.clone();
        l2[2] = l2[2].replace(&lat, "\"lat_deg\":123.0");
        let err = parse_dataset(&l2.join("\n"), Path::new("f.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, ref field, .. } if field == "lat_deg"), "{err}");

        let mut l3 = lines.clone();
        l3[1] = l3[1].replace("\"street\":", "\"road\":");
        let err = parse_dataset(&l3.join("\n"), Path::new("f.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");

        let mut l4 = lines.clone();
        l4[4] = lines[0].clone();
        let err = parse_dataset(&l4.join("\n"), Path::new("f.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 5, ref field, .. } if field == "id"), "{err}");

        assert!(parse_dataset("", Path::new("empty")).is_err());
        assert!(parse_dataset("\n\n", Path::new("empty")).is_err());
    }

    #[test]
    fn split_partitions_and_stratifies() {
        let ds = generate_world(&WorldConfig::default()).unwrap();
        let (tr, te) = split(&ds, 0.8, 3).unwrap();
        assert_eq!(tr.len(), 640);
        assert_eq!(te.len(), 160);
        let ids_tr: HashSet<_> = tr.samples.iter().map(|s| s.id.clone()).collect();
        let ids_te: HashSet<_> = te.samples.iter().map(|s| s.id.clone()).collect();
        assert!(ids_tr.is_disjoint(&ids_te));
        assert_eq!(ids_tr.len() + ids_te.len(), ds.len());
        for r in 0..8 {
            assert!(tr.samples.iter().any(|s| s.region_id == r));
            assert!(te.samples.iter().any(|s| s.region_id == r));
        }
        assert_eq!(split(&ds, 0.8, 3).unwrap(), (tr, te));
        assert!(split(&ds, 1.0, 3).is_err());
        assert!(split(&ds, 0.0, 3).is_err());
    }

    #[test]
    fn singleton_city_goes_to_train() {
        let mut ds = generate_world(&small()).unwrap();
        ds.samples[0].city = "Solo".into();
        let (tr, te) = split(&ds, 0.5, 1).unwrap();
        assert!(tr.samples.iter().any(|s| s.city == "Solo"));
        assert!(!te.samples.iter().any(|s| s.city == "Solo"));
    }

    #[test]
    fn field_guess() {
        let line = r#"{"id":"a","lat_deg":NaN,"lon_deg":1}"#;
        let col = line.find("NaN").unwrap() + 1;
        assert_eq!(field_at(line, col), "lat_deg");
    }
}
