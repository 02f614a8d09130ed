//! Images, masks, measurements and the synthetic layered-phantom benchmark.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::arrays;
use crate::error::{Error, Result};
use crate::recon::ForwardOperator;

/// Dense row-major 2D intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Shape(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "image {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite image value at index {i}"
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    /// Builds an image without the finiteness scan. Callers guarantee the invariant.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn dot(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

/// Ordered stack of equally sized slices belonging to one case.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    slices: Vec<Image>,
    case_id: String,
    pub metadata: BTreeMap<String, String>,
}

impl Volume {
    pub fn new(case_id: impl Into<String>, slices: Vec<Image>) -> Result<Self> {
        let case_id = case_id.into();
        if case_id.is_empty() {
            return Err(Error::Validation("volume case_id must be non-empty".into()));
        }
        if let Some(first) = slices.first() {
            if let Some(bad) = slices.iter().position(|s| s.dims() != first.dims()) {
                return Err(Error::Shape(format!(
                    "slice {bad} has dims {:?}, expected {:?}",
                    slices[bad].dims(),
                    first.dims()
                )));
            }
        }
        Ok(Self {
            slices,
            case_id,
            metadata: BTreeMap::new(),
        })
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn case_id(&self) -> &str {
        &self.case_id
    }
}

/// Integer label map with classes `0..num_classes`; class 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentationMask {
    height: usize,
    width: usize,
    num_classes: usize,
    labels: Vec<u32>,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize, num_classes: usize, labels: Vec<u32>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Validation(format!(
                "segmentation needs at least 2 classes, got {num_classes}"
            )));
        }
        if labels.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Validation(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            labels,
        })
    }

    pub fn background(height: usize, width: usize, num_classes: usize) -> Result<Self> {
        Self::new(height, width, num_classes, vec![0; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn count(&self, class: u32) -> usize {
        self.labels.iter().filter(|&&l| l == class).count()
    }

    pub fn contains(&self, class: u32) -> bool {
        self.labels.contains(&class)
    }
}

/// Observed data produced by a registered forward operator.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    height: usize,
    width: usize,
    data: Vec<f64>,
    operator_id: String,
}

impl Measurement {
    pub fn new(
        height: usize,
        width: usize,
        data: Vec<f64>,
        operator_id: impl Into<String>,
    ) -> Result<Self> {
        let operator_id = operator_id.into();
        ForwardOperator::from_id(&operator_id)?;
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "measurement {height}x{width} needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite measurement value".into()));
        }
        Ok(Self {
            height,
            width,
            data,
            operator_id,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn operator_id(&self) -> &str {
        &self.operator_id
    }

    pub fn dot(&self, other: &Measurement) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }
}

/// Intensity remap applied to target-domain measurements:
/// `m' = gain * max(m, 0)^gamma + offset + N(0, noise_std^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftConfig {
    pub gamma: f64,
    pub gain: f64,
    pub offset: f64,
    pub noise_std: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            gain: 1.0,
            offset: 0.0,
            noise_std: 0.0,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!("shift gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.gain > 0.0 && self.gain.is_finite() && self.offset.is_finite()) {
            return Err(Error::Config("shift gain must be > 0 and offset finite".into()));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config("shift noise_std must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Inclusive range of lesions drawn per foreground class.
    pub lesions_min: usize,
    pub lesions_max: usize,
    /// Probability that a given foreground class is absent from a case.
    pub absent_prob: f64,
    /// Ellipse semi-axis range as a fraction of the image height.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Additive speckle-like texture on the clean image.
    pub texture_std: f64,
    /// Measurement noise standard deviation.
    pub noise_std: f64,
    pub operator_id: String,
    /// Forces every case to be lesion-free.
    pub force_empty: bool,
    pub shift: Option<ShiftConfig>,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            num_classes: 4,
            lesions_min: 1,
            lesions_max: 2,
            absent_prob: 0.25,
            radius_min: 0.05,
            radius_max: 0.12,
            texture_std: 0.02,
            noise_std: 0.03,
            operator_id: "identity".into(),
            force_empty: false,
            shift: None,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "phantom dimensions must be positive, got {}x{}",
                self.height, self.width
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        if self.lesions_min > self.lesions_max {
            return Err(Error::Config("lesions_min exceeds lesions_max".into()));
        }
        if !(0.0..=1.0).contains(&self.absent_prob) {
            return Err(Error::Config("absent_prob must lie in [0, 1]".into()));
        }
        if !(self.radius_min > 0.0 && self.radius_min <= self.radius_max) {
            return Err(Error::Config("radius range must satisfy 0 < min <= max".into()));
        }
        if !(self.noise_std >= 0.0 && self.texture_std >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if let Some(shift) = &self.shift {
            shift.validate()?;
        }
        let op = ForwardOperator::from_id(&self.operator_id)?;
        op.measurement_dims(self.height, self.width)?;
        Ok(())
    }
}

/// Nominal intensity of lesion class `class` (1-based) among `foreground` classes.
/// Roughly two thirds of the classes are dark (fluid-like), the rest bright.
pub fn lesion_intensity(class: usize, foreground: usize) -> f64 {
    debug_assert!(class >= 1 && class <= foreground);
    let dark = ((2 * foreground) + 2) / 3;
    if class <= dark {
        if dark == 1 {
            0.05
        } else {
            0.03 + 0.19 * (class - 1) as f64 / (dark - 1) as f64
        }
    } else {
        let bright = foreground - dark;
        let k = class - dark - 1;
        if bright == 1 {
            0.93
        } else {
            0.88 + 0.10 * k as f64 / (bright - 1) as f64
        }
    }
}

/// One synthetic benchmark case.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCase {
    pub case_id: String,
    pub clean: Image,
    pub mask: SegmentationMask,
    pub measurement: Measurement,
    pub seed: u64,
}

pub fn case_id_for_seed(seed: u64) -> String {
    format!("case-{seed:08}")
}

/// Generates a layered phantom with elliptical lesions and its measurement.
/// Pure function of `(seed, config)`.
pub fn generate_synthetic_case(seed: u64, config: &PhantomConfig) -> Result<SyntheticCase> {
    config.validate()?;
    let (h, w) = (config.height, config.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    // Horizontal bands with gently undulating boundaries.
    let n_bands = rng.gen_range(4..=6usize);
    let mut levels: Vec<f64> = (0..n_bands)
        .map(|k| 0.35 + 0.40 * k as f64 / (n_bands - 1) as f64 + rng.gen_range(-0.02..0.02))
        .collect();
    for i in (1..levels.len()).rev() {
        let j = rng.gen_range(0..=i);
        levels.swap(i, j);
    }
    let mut cuts: Vec<f64> = (0..n_bands - 1)
        .map(|_| rng.gen_range(0.08..0.92) * h as f64)
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let waves: Vec<(f64, f64, f64)> = cuts
        .iter()
        .map(|_| {
            (
                rng.gen_range(0.0..0.03) * h as f64,
                rng.gen_range(0.5..2.5) * std::f64::consts::TAU / w as f64,
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();

    let mut clean = vec![0.0; h * w];
    for r in 0..h {
        for c in 0..w {
            let y = r as f64 + 0.5;
            let band = cuts
                .iter()
                .zip(&waves)
                .filter(|(cut, (amp, freq, phase))| {
                    y > **cut + amp * (freq * c as f64 + phase).sin()
                })
                .count();
            clean[r * w + c] = levels[band];
        }
    }

    // Elliptical lesions, one pass per foreground class.
    let foreground = config.num_classes - 1;
    let mut labels = vec![0u32; h * w];
    for class in 1..=foreground {
        let absent = config.force_empty || rng.gen_bool(config.absent_prob);
        let count = if absent {
            0
        } else {
            rng.gen_range(config.lesions_min..=config.lesions_max)
        };
        let intensity = lesion_intensity(class, foreground);
        for _ in 0..count {
            let cy = rng.gen_range(0.15..0.85) * h as f64;
            let cx = rng.gen_range(0.10..0.90) * w as f64;
            let ry = rng.gen_range(config.radius_min..=config.radius_max) * h as f64;
            let rx = rng.gen_range(config.radius_min..=config.radius_max) * 1.6 * h as f64;
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let (sin, cos) = angle.sin_cos();
            let reach = rx.max(ry).ceil() as isize + 1;
            let (r0, c0) = (cy.floor() as isize, cx.floor() as isize);
            for r in (r0 - reach).max(0)..=(r0 + reach).min(h as isize - 1) {
                for c in (c0 - reach).max(0)..=(c0 + reach).min(w as isize - 1) {
                    let dy = r as f64 + 0.5 - cy;
                    let dx = c as f64 + 0.5 - cx;
                    let u = (dx * cos + dy * sin) / rx;
                    let v = (-dx * sin + dy * cos) / ry;
                    if u * u + v * v <= 1.0 {
                        let idx = r as usize * w + c as usize;
                        labels[idx] = class as u32;
                        clean[idx] = intensity;
                    }
                }
            }
        }
    }

    if config.texture_std > 0.0 {
        for v in clean.iter_mut() {
            *v += config.texture_std * std_normal.sample(&mut rng);
        }
    }
    for v in clean.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    let clean = Image::from_raw(h, w, clean);
    let mask = SegmentationMask::new(h, w, config.num_classes, labels)?;

    let op = ForwardOperator::from_id(&config.operator_id)?;
    let projected = op.apply(&clean)?;
    let (mh, mw) = projected.dims();
    let mut mdata = projected.data().to_vec();
    if config.noise_std > 0.0 {
        for v in mdata.iter_mut() {
            *v += config.noise_std * std_normal.sample(&mut rng);
        }
    }
    if let Some(shift) = &config.shift {
        apply_shift(&mut mdata, shift, &mut rng);
    }
    let measurement = Measurement::new(mh, mw, mdata, config.operator_id.clone())?;

    Ok(SyntheticCase {
        case_id: case_id_for_seed(seed),
        clean,
        mask,
        measurement,
        seed,
    })
}

fn apply_shift(data: &mut [f64], shift: &ShiftConfig, rng: &mut ChaCha8Rng) {
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for v in data.iter_mut() {
        *v = shift.gain * v.max(0.0).powf(shift.gamma) + shift.offset;
        if shift.noise_std > 0.0 {
            *v += shift.noise_std * std_normal.sample(rng);
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CaseManifest {
    case_id: String,
    seed: u64,
    height: usize,
    width: usize,
    num_classes: usize,
    operator_id: String,
    measurement_height: usize,
    measurement_width: usize,
}

const CLEAN_FILE: &str = "clean.bin";
const MASK_FILE: &str = "mask.bin";
const MEASUREMENT_FILE: &str = "measurement.bin";
const MANIFEST_FILE: &str = "manifest.json";

/// Writes a case into `dir` (created if needed): three array files plus a JSON manifest.
pub fn save_case(case: &SyntheticCase, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (h, w) = case.clean.dims();
    let (mh, mw) = case.measurement.dims();
    let manifest = CaseManifest {
        case_id: case.case_id.clone(),
        seed: case.seed,
        height: h,
        width: w,
        num_classes: case.mask.num_classes(),
        operator_id: case.measurement.operator_id().to_string(),
        measurement_height: mh,
        measurement_width: mw,
    };
    arrays::write_f64(&dir.join(CLEAN_FILE), &[h, w], case.clean.data())?;
    arrays::write_u32(&dir.join(MASK_FILE), &[h, w], case.mask.labels())?;
    arrays::write_f64(
        &dir.join(MEASUREMENT_FILE),
        &[mh, mw],
        case.measurement.data(),
    )?;
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn expect_dims(path: &Path, dims: &[usize], expected: [usize; 2]) -> Result<()> {
    if dims != expected {
        return Err(Error::Io {
            path: path.to_path_buf(),
            reason: format!("dimension mismatch: file has {dims:?}, manifest says {expected:?}"),
        });
    }
    Ok(())
}

pub fn load_case(dir: &Path) -> Result<SyntheticCase> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: CaseManifest = serde_json::from_str(&text)
        .map_err(|e| Error::corrupt(&manifest_path, format!("bad manifest: {e}")))?;
    if manifest.num_classes < 2 {
        return Err(Error::Validation(format!(
            "{}: declares {} classes, need at least 2",
            manifest_path.display(),
            manifest.num_classes
        )));
    }
    if manifest.case_id.is_empty() {
        return Err(Error::Validation(format!(
            "{}: empty case_id",
            manifest_path.display()
        )));
    }

    let clean_path = dir.join(CLEAN_FILE);
    let (dims, clean) = arrays::read_f64(&clean_path)?;
    expect_dims(&clean_path, &dims, [manifest.height, manifest.width])?;
    let clean = Image::new(manifest.height, manifest.width, clean)?;

    let mask_path = dir.join(MASK_FILE);
    let (dims, labels) = arrays::read_u32(&mask_path)?;
    expect_dims(&mask_path, &dims, [manifest.height, manifest.width])?;
    let mask = SegmentationMask::new(manifest.height, manifest.width, manifest.num_classes, labels)?;

    let meas_path = dir.join(MEASUREMENT_FILE);
    let (dims, mdata) = arrays::read_f64(&meas_path)?;
    expect_dims(
        &meas_path,
        &dims,
        [manifest.measurement_height, manifest.measurement_width],
    )?;
    let measurement = Measurement::new(
        manifest.measurement_height,
        manifest.measurement_width,
        mdata,
        manifest.operator_id,
    )?;

    Ok(SyntheticCase {
        case_id: manifest.case_id,
        clean,
        mask,
        measurement,
        seed: manifest.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forced_empty_case_has_background_mask_and_noisy_measurement() {
        let cfg = PhantomConfig {
            force_empty: true,
            ..Default::default()
        };
        let case = generate_synthetic_case(7, &cfg).unwrap();
        assert!(case.mask.labels().iter().all(|&l| l == 0));
        let op = ForwardOperator::from_id(&cfg.operator_id).unwrap();
        let clean_m = op.apply(&case.clean).unwrap();
        let resid: Vec<f64> = case
            .measurement
            .data()
            .iter()
            .zip(clean_m.data())
            .map(|(a, b)| a - b)
            .collect();
        let n = resid.len() as f64;
        let mean = resid.iter().sum::<f64>() / n;
        let std = (resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() < 0.01, "noise mean {mean}");
        assert!((std - cfg.noise_std).abs() < 0.005, "noise std {std}");
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = PhantomConfig::default();
        let a = generate_synthetic_case(7, &cfg).unwrap();
        let b = generate_synthetic_case(7, &cfg).unwrap();
        assert_eq!(a, b);
        let bits = |img: &Image| img.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.clean), bits(&b.clean));
    }

    #[test]
    fn different_seeds_place_lesions_differently() {
        let cfg = PhantomConfig::default();
        let a = generate_synthetic_case(7, &cfg).unwrap();
        let b = generate_synthetic_case(8, &cfg).unwrap();
        assert_ne!(a.mask.labels(), b.mask.labels());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let one_class = PhantomConfig {
            num_classes: 1,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic_case(0, &one_class),
            Err(Error::Config(_))
        ));
        let zero_dim = PhantomConfig {
            height: 0,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic_case(0, &zero_dim),
            Err(Error::Config(_))
        ));
        let bad_op = PhantomConfig {
            operator_id: "fourier".into(),
            ..Default::default()
        };
        assert!(generate_synthetic_case(0, &bad_op).is_err());
    }

    #[test]
    fn lesions_differ_in_intensity_from_surroundings() {
        let cfg = PhantomConfig {
            absent_prob: 0.0,
            ..Default::default()
        };
        for seed in 0..10 {
            let case = generate_synthetic_case(seed, &cfg).unwrap();
            let outside: Vec<f64> = case
                .clean
                .data()
                .iter()
                .zip(case.mask.labels())
                .filter(|(_, &l)| l == 0)
                .map(|(v, _)| *v)
                .collect();
            let out_mean = outside.iter().sum::<f64>() / outside.len() as f64;
            for class in 1..cfg.num_classes as u32 {
                let inside: Vec<f64> = case
                    .clean
                    .data()
                    .iter()
                    .zip(case.mask.labels())
                    .filter(|(_, &l)| l == class)
                    .map(|(v, _)| *v)
                    .collect();
                if inside.is_empty() {
                    continue;
                }
                let in_mean = inside.iter().sum::<f64>() / inside.len() as f64;
                assert!(
                    (in_mean - out_mean).abs() > 0.1,
                    "seed {seed} class {class}: {in_mean} vs {out_mean}"
                );
            }
        }
    }

    #[test]
    fn absent_probability_one_yields_empty_masks() {
        let cfg = PhantomConfig {
            absent_prob: 1.0,
            ..Default::default()
        };
        let case = generate_synthetic_case(3, &cfg).unwrap();
        assert_eq!(case.mask.count(0), 64 * 64);
    }

    #[test]
    fn shift_changes_measurement_only() {
        let base = PhantomConfig::default();
        let shifted = PhantomConfig {
            shift: Some(ShiftConfig {
                gamma: 0.5,
                ..Default::default()
            }),
            ..Default::default()
        };
        let a = generate_synthetic_case(11, &base).unwrap();
        let b = generate_synthetic_case(11, &shifted).unwrap();
        assert_eq!(a.clean, b.clean);
        assert_eq!(a.mask, b.mask);
        for (x, y) in a.measurement.data().iter().zip(b.measurement.data()) {
            assert!((x.max(0.0).sqrt() - y).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn mask_rejects_out_of_range_labels() {
        assert!(SegmentationMask::new(1, 2, 3, vec![0, 3]).is_err());
        assert!(SegmentationMask::new(1, 2, 1, vec![0, 0]).is_err());
    }

    #[test]
    fn volume_requires_uniform_slices_and_id() {
        let a = Image::zeros(4, 4);
        let b = Image::zeros(4, 5);
        assert!(Volume::new("v", vec![a.clone(), b]).is_err());
        assert!(Volume::new("", vec![a.clone()]).is_err());
        assert_eq!(Volume::new("v", vec![a.clone(), a]).unwrap().slices().len(), 2);
    }

    #[test]
    fn image_rejects_nan() {
        assert!(Image::new(1, 2, vec![0.0, f64::NAN]).is_err());
    }
}
