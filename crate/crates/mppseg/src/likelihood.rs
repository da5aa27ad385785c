//! Pixelwise Gaussian likelihood with the minimum-mean overlap rule.
//!
//! Every pixel is assigned an effective (mean, variance): background values
//! where no object covers it, the covering object's values where exactly one
//! does, and the values of the covering object with the smallest mean where
//! several do (darkest object dominates). Ties on the mean go to the lower
//! object index so the assignment is deterministic.
//!
//! Normalization constants are kept in all log densities: the exchange-step
//! ratios compare states with different variance vectors, where the
//! `-0.5 log(2 pi var)` terms do not cancel.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{rasterize, Configuration, Frame, ObjectParams};

/// 8-bit grayscale image with intensities stored in the model convention,
/// integers in [1, 256].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub width: u32,
    pub height: u32,
    pub data: Vec<u16>,
}

impl Image {
    pub fn new(width: u32, height: u32, data: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != (width as usize) * (height as usize) {
            return Err(Error::Argument(format!(
                "image dimensions {width}x{height} do not match {} values",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v < 1 || v > 256) {
            return Err(Error::Argument(format!("intensity {v} outside [1, 256]")));
        }
        Ok(Image { width, height, data })
    }

    pub fn constant(width: u32, height: u32, value: u16) -> Result<Self> {
        Image::new(width, height, vec![value; (width as usize) * (height as usize)])
    }

    pub fn pixel_count(&self) -> usize {
        self.data.len()
    }

    pub fn frame(&self) -> Frame {
        Frame::new(self.width, self.height)
    }

    pub fn value(&self, p: usize) -> f64 {
        self.data[p] as f64
    }
}

/// Background and per-object intensity parameters; index 0 is background.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntensityParams {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
}

impl IntensityParams {
    pub fn new(means: Vec<f64>, variances: Vec<f64>) -> Result<Self> {
        if means.is_empty() || means.len() != variances.len() {
            return Err(Error::Argument("means and variances must have equal nonzero length".into()));
        }
        if variances.iter().any(|&v| !(v > 0.0)) {
            return Err(Error::Argument("variances must be positive".into()));
        }
        Ok(IntensityParams { means, variances })
    }

    /// Number of objects this vector covers (length minus background).
    pub fn object_count(&self) -> usize {
        self.means.len() - 1
    }
}

/// Per-pixel owner assignment. Owner 0 is the background; owner `i >= 1`
/// refers to object `i - 1` of the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub owner: Vec<u16>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl LabelMap {
    pub fn effective(&self, p: usize) -> (f64, f64) {
        (self.mean[p], self.variance[p])
    }
}

/// Assign every pixel its owning object and effective (mean, variance)
/// under the minimum-mean rule.
pub fn build_label_map(
    cfg: &Configuration,
    ints: &IntensityParams,
    frame: &Frame,
) -> Result<LabelMap> {
    if ints.means.len() != cfg.count() + 1 {
        return Err(Error::Argument(format!(
            "intensity vectors of length {} do not match {} objects",
            ints.means.len(),
            cfg.count()
        )));
    }
    let n = frame.pixel_count();
    let mut owner = vec![0u16; n];
    // Ascending object order makes mean ties resolve to the lower index.
    for (i, obj) in cfg.objects.iter().enumerate() {
        let idx = (i + 1) as u16;
        let mu = ints.means[i + 1];
        for &p in &rasterize(obj, frame) {
            let cur = owner[p as usize];
            if cur == 0 || mu < ints.means[cur as usize] {
                owner[p as usize] = idx;
            }
        }
    }
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    for &o in &owner {
        mean.push(ints.means[o as usize]);
        variance.push(ints.variances[o as usize]);
    }
    Ok(LabelMap { owner, mean, variance })
}

#[inline]
pub fn gaussian_log_density(y: f64, mean: f64, variance: f64) -> f64 {
    let d = y - mean;
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - d * d / (2.0 * variance)
}

/// Full log likelihood of the image under the configuration, including
/// Gaussian normalization terms.
pub fn log_likelihood(
    img: &Image,
    cfg: &Configuration,
    ints: &IntensityParams,
    frame: &Frame,
) -> Result<f64> {
    if img.width != frame.width || img.height != frame.height {
        return Err(Error::Argument("image dimensions do not match frame".into()));
    }
    let map = build_label_map(cfg, ints, frame)?;
    let mut acc = 0.0;
    for p in 0..img.pixel_count() {
        acc += gaussian_log_density(img.value(p), map.mean[p], map.variance[p]);
    }
    Ok(acc)
}

/// Log-likelihood change from replacing object `changed` (whose previous
/// marks were `old`) with its current marks in `cfg`. Only pixels in the
/// union of the old and new rasterizations are rescanned; the result equals
/// the difference of full evaluations to floating-point accuracy.
pub fn delta_log_likelihood(
    img: &Image,
    cfg: &Configuration,
    ints: &IntensityParams,
    frame: &Frame,
    changed: usize,
    old: &ObjectParams,
) -> Result<f64> {
    if changed >= cfg.count() {
        return Err(Error::Argument(format!("object index {changed} out of range")));
    }
    if ints.means.len() != cfg.count() + 1 {
        return Err(Error::Argument("intensity vectors do not match configuration".into()));
    }
    let rasters: Vec<Vec<u32>> = cfg.objects.iter().map(|o| rasterize(o, frame)).collect();
    let old_raster = rasterize(old, frame);

    let mut union: Vec<u32> =
        old_raster.iter().chain(rasters[changed].iter()).copied().collect();
    union.sort_unstable();
    union.dedup();

    let effective = |p: u32, changed_raster: &Vec<u32>| -> (f64, f64) {
        let mut best = 0usize;
        for i in 0..rasters.len() {
            let r = if i == changed { changed_raster } else { &rasters[i] };
            if r.binary_search(&p).is_ok() {
                let idx = i + 1;
                if best == 0 || ints.means[idx] < ints.means[best] {
                    best = idx;
                }
            }
        }
        (ints.means[best], ints.variances[best])
    };

    let mut delta = 0.0;
    for &p in &union {
        let y = img.value(p as usize);
        let (m_new, v_new) = effective(p, &rasters[changed]);
        let (m_old, v_old) = effective(p, &old_raster);
        delta += gaussian_log_density(y, m_new, v_new) - gaussian_log_density(y, m_old, v_old);
    }
    Ok(delta)
}

/// Draw a real-valued Gaussian field with the label map's per-pixel
/// parameters. Used for exchange-step auxiliaries, where the density must
/// match the sampling distribution exactly.
pub fn sample_field<R: Rng>(map: &LabelMap, rng: &mut R) -> Vec<f64> {
    let normal = rand_distr::StandardNormal;
    map.mean
        .iter()
        .zip(&map.variance)
        .map(|(&m, &v)| {
            let z: f64 = normal.sample(rng);
            m + v.sqrt() * z
        })
        .collect()
}

/// Log density of a real-valued field under the label map's parameters.
pub fn field_log_density(field: &[f64], map: &LabelMap) -> f64 {
    field
        .iter()
        .enumerate()
        .map(|(p, &z)| gaussian_log_density(z, map.mean[p], map.variance[p]))
        .sum()
}

/// Draw a quantized image: per-pixel Gaussian, rounded and clamped to the
/// [1, 256] intensity range. This is the simulator's output path.
pub fn sample_image<R: Rng>(
    cfg: &Configuration,
    ints: &IntensityParams,
    frame: &Frame,
    rng: &mut R,
) -> Result<Image> {
    let map = build_label_map(cfg, ints, frame)?;
    let field = sample_field(&map, rng);
    let data = field.iter().map(|&z| quantize(z)).collect();
    Image::new(frame.width, frame.height, data)
}

#[inline]
pub fn quantize(z: f64) -> u16 {
    z.round().clamp(1.0, 256.0) as u16
}
