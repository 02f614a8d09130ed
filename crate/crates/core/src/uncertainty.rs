//! Trajectory-ensemble aggregation and pixel-wise entropy uncertainty.

use std::fs;
use std::path::Path;

use crate::arrays;
use crate::backbone::{argmax_rows, ProbMap};
use crate::error::{Error, Result};
use crate::volume::SegmentationMask;

/// Mean prediction of a trajectory ensemble with its label and entropy maps.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    /// Pixel-major `d x C`.
    pub mean_probs: Vec<f64>,
    pub label_map: SegmentationMask,
    /// Natural-log entropy of `mean_probs`, bounded by `ln C`.
    pub entropy_map: Vec<f64>,
}

/// Arithmetic mean of the probability tables, pixel-major `d x C`.
pub fn ensemble_mean(maps: &[ProbMap]) -> Result<Vec<f64>> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Argument("ensemble of zero predictions".into()))?;
    for m in maps {
        if (m.height(), m.width(), m.num_classes())
            != (first.height(), first.width(), first.num_classes())
        {
            return Err(Error::Shape("ensemble members differ in size".into()));
        }
    }
    let inv = 1.0 / maps.len() as f64;
    let mut mean = vec![0.0; first.probs().len()];
    for m in maps {
        for (acc, p) in mean.iter_mut().zip(m.probs()) {
            *acc += p;
        }
    }
    mean.iter_mut().for_each(|v| *v *= inv);
    Ok(mean)
}

/// Per-pixel entropy `-sum p ln p` with `0 ln 0 = 0`.
pub fn entropy_map(probs: &[f64], classes: usize) -> Result<Vec<f64>> {
    if classes == 0 || probs.len() % classes != 0 {
        return Err(Error::Shape(format!(
            "{} probabilities do not split into rows of {classes}",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(**p >= 0.0)) {
        return Err(Error::Argument(format!("invalid probability {p}")));
    }
    Ok(probs
        .chunks_exact(classes)
        .map(|row| {
            let h: f64 = row
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| -p * p.ln())
                .sum();
            h.max(0.0)
        })
        .collect())
}

/// Mean, argmax (lowest index on ties) and entropy of a trajectory ensemble.
pub fn finalize(maps: &[ProbMap]) -> Result<EnsembleResult> {
    let mean_probs = ensemble_mean(maps)?;
    let first = &maps[0];
    let classes = first.num_classes();
    let entropy_map = entropy_map(&mean_probs, classes)?;
    let label_map = SegmentationMask::new(
        first.height(),
        first.width(),
        classes,
        argmax_rows(&mean_probs, classes),
    )?;
    Ok(EnsembleResult {
        height: first.height(),
        width: first.width(),
        num_classes: classes,
        mean_probs,
        label_map,
        entropy_map,
    })
}

impl EnsembleResult {
    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Upper bound of every entropy value.
    pub fn max_entropy(&self) -> f64 {
        (self.num_classes as f64).ln()
    }

    /// Probability of the predicted class per pixel.
    pub fn confidence(&self) -> Vec<f64> {
        self.mean_probs
            .chunks_exact(self.num_classes)
            .zip(self.label_map.labels())
            .map(|(row, &l)| row[l as usize])
            .collect()
    }

    /// Summed probability of all non-background classes per pixel.
    pub fn foreground_prob(&self) -> Vec<f64> {
        self.mean_probs
            .chunks_exact(self.num_classes)
            .map(|row| row[1..].iter().sum::<f64>().min(1.0))
            .collect()
    }

    /// Entropy rescaled to [0, 1] by its own min and max (all zero when flat).
    pub fn normalized_entropy(&self) -> Vec<f64> {
        min_max(&self.entropy_map)
    }

    /// Writes `labels.bin`, `entropy.bin`, `entropy_norm.bin` and PNG renderings.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let dims = [self.height, self.width];
        arrays::write_u32(&dir.join("labels.bin"), &dims, self.label_map.labels())?;
        arrays::write_f64(&dir.join("entropy.bin"), &dims, &self.entropy_map)?;
        let norm = self.normalized_entropy();
        arrays::write_f64(&dir.join("entropy_norm.bin"), &dims, &norm)?;
        // raw map against the fixed ln C scale, normalized map against its own range
        let raw: Vec<f64> = self
            .entropy_map
            .iter()
            .map(|h| h / self.max_entropy())
            .collect();
        write_gray_png(&dir.join("entropy.png"), self.height, self.width, &raw)?;
        write_gray_png(&dir.join("entropy_norm.png"), self.height, self.width, &norm)?;
        let scale = (self.num_classes - 1).max(1) as f64;
        let labels: Vec<f64> = self
            .label_map
            .labels()
            .iter()
            .map(|&l| l as f64 / scale)
            .collect();
        write_gray_png(&dir.join("labels.png"), self.height, self.width, &labels)
    }
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// 8-bit grayscale rendering of values in [0, 1] (clamped).
pub fn write_gray_png(path: &Path, height: usize, width: usize, values: &[f64]) -> Result<()> {
    if values.len() != height * width {
        return Err(Error::Shape(format!(
            "{} values for a {height}x{width} image",
            values.len()
        )));
    }
    let pixels: Vec<u8> = values
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, pixels)
        .expect("buffer matches dimensions");
    img.save(path).map_err(|e| Error::io(path, e))
}
