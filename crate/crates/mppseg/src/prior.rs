//! Prior densities and prior samplers.
//!
//! The point-process prior over object locations and count is an
//! area-interaction density: up to a normalizing constant that is never
//! evaluated, `exp(-gamma1 * m - gamma2 * S)` where `S` is the physical area
//! of the image covered by more than one object. A two-way variant
//! penalizes the summed pairwise overlaps instead and forbids any pixel
//! covered three or more times.
//!
//! Marks are independent across objects: uniform scale on (0, s_max), a
//! rotation density `(|cos t| + 1/pi)/3` on (0, pi] that favors axis-aligned
//! objects, a location-scale Beta for the template's pure parameter and a
//! uniform template choice. Interaction parameters get independent
//! lognormal hyperpriors.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::geometry::{rasterize, Configuration, Frame, ObjectParams, Template, TEMPLATES};
use crate::likelihood::IntensityParams;

/// Interaction parameters: `gamma1` penalizes the object count, `gamma2`
/// the multiply-covered area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionParams {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl InteractionParams {
    pub fn new(gamma1: f64, gamma2: f64) -> Result<Self> {
        if !(gamma1 > 0.0) || !(gamma2 > 0.0) {
            return Err(Error::Argument(format!(
                "interaction parameters must be positive, got ({gamma1}, {gamma2})"
            )));
        }
        Ok(InteractionParams { gamma1, gamma2 })
    }
}

/// Which overlap penalty the interaction prior uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionMode {
    /// Penalize the area covered by two or more objects.
    AreaOfMultiCoverage,
    /// Penalize the summed pairwise overlap areas and forbid three-way
    /// coverage.
    TwoWayPairwise,
}

/// Location-scale Beta on the open interval (a, b) with shape (alpha, beta).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn log_density(&self, x: f64) -> f64 {
        if x <= self.a || x >= self.b {
            return f64::NEG_INFINITY;
        }
        let ln_b = statrs::function::beta::ln_beta(self.alpha, self.beta);
        (self.alpha - 1.0) * (x - self.a).ln() + (self.beta - 1.0) * (self.b - x).ln()
            - (self.alpha + self.beta - 1.0) * (self.b - self.a).ln()
            - ln_b
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let beta = rand_distr::Beta::new(self.alpha, self.beta).expect("valid Beta shapes");
        self.a + (self.b - self.a) * beta.sample(rng)
    }
}

/// Lognormal hyperprior parameters (log-location, log-scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalParams {
    pub location: f64,
    pub scale: f64,
}

impl LognormalParams {
    /// Location chosen so the distribution has the given mean at the given
    /// log-scale.
    pub fn with_mean(mean: f64, scale: f64) -> Self {
        LognormalParams { location: mean.ln() - scale * scale / 2.0, scale }
    }

    pub fn log_density(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        let z = (x.ln() - self.location) / self.scale;
        -x.ln() - self.scale.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5 * z * z
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let normal = rand_distr::Normal::new(self.location, self.scale).expect("valid lognormal");
        normal.sample(rng).exp()
    }
}

/// Everything the priors need to know, bundled for configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorConfig {
    /// Upper bound of the uniform scale prior, in pixels.
    pub s_max: f64,
    /// Pure-parameter prior for the ellipse family.
    pub ellipse_pure: BetaParams,
    /// Pure-parameter prior for the triangle family.
    pub triangle_pure: BetaParams,
    pub gamma1_hyper: LognormalParams,
    pub gamma2_hyper: LognormalParams,
    /// Template catalog; the template prior is uniform over it.
    pub templates: Vec<Template>,
    pub interaction_mode: InteractionMode,
    /// Support box for the otherwise improper intensity prior. Keeps the
    /// posterior of objects without visible pixels proper and gives birth
    /// proposals a finite range to draw from.
    pub intensity_mean_range: (f64, f64),
    pub intensity_var_range: (f64, f64),
}

impl Default for PriorConfig {
    fn default() -> Self {
        let (ea, eb) = Template::Ellipse.pure_param_bounds().unwrap();
        let (ta, tb) = Template::Triangle.pure_param_bounds().unwrap();
        PriorConfig {
            s_max: 50.0,
            ellipse_pure: BetaParams { a: ea, b: eb, alpha: 2.0, beta: 2.0 },
            triangle_pure: BetaParams { a: ta, b: tb, alpha: 2.0, beta: 2.0 },
            gamma1_hyper: LognormalParams::with_mean(100.0, 1.5),
            gamma2_hyper: LognormalParams::with_mean(100.0, 1.5),
            templates: TEMPLATES.to_vec(),
            interaction_mode: InteractionMode::AreaOfMultiCoverage,
            intensity_mean_range: (1.0, 256.0),
            intensity_var_range: (0.25, 400.0),
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_max > 0.0) {
            return Err(Error::Config("s_max must be positive".into()));
        }
        for (name, p) in
            [("ellipse_pure", &self.ellipse_pure), ("triangle_pure", &self.triangle_pure)]
        {
            if !(p.a < p.b) || !(p.alpha > 0.0) || !(p.beta > 0.0) {
                return Err(Error::Config(format!("invalid Beta parameters for {name}")));
            }
        }
        for (name, tpl, p) in [
            ("ellipse_pure", Template::Ellipse, &self.ellipse_pure),
            ("triangle_pure", Template::Triangle, &self.triangle_pure),
        ] {
            let (lo, hi) = tpl.pure_param_bounds().unwrap();
            if p.a < lo || p.b > hi {
                return Err(Error::Config(format!(
                    "{name} interval ({}, {}) exceeds template bounds ({lo}, {hi})",
                    p.a, p.b
                )));
            }
        }
        if self.templates.is_empty() {
            return Err(Error::Config("template catalog is empty".into()));
        }
        if !(self.intensity_mean_range.0 < self.intensity_mean_range.1)
            || !(self.intensity_var_range.0 > 0.0)
            || !(self.intensity_var_range.0 < self.intensity_var_range.1)
        {
            return Err(Error::Config("invalid intensity support box".into()));
        }
        Ok(())
    }

    pub fn pure_params(&self, template: Template) -> Option<&BetaParams> {
        match template {
            Template::Ellipse => Some(&self.ellipse_pure),
            Template::Triangle => Some(&self.triangle_pure),
            _ => None,
        }
    }

    /// Margin added around the frame for the center prior, so objects may
    /// straddle the image boundary.
    pub fn center_margin(&self) -> f64 {
        self.s_max / 2.0
    }

    /// Center prior support: the frame extended by the margin on each side.
    pub fn center_bounds(&self, frame: &Frame) -> ([f64; 2], [f64; 2]) {
        let m = self.center_margin();
        ([-m, frame.width as f64 - 1.0 + m], [-m, frame.height as f64 - 1.0 + m])
    }

    /// Log density of the uniform center prior over the extended frame.
    pub fn log_center_prior(&self, center: [f64; 2], frame: &Frame) -> f64 {
        let (bx, by) = self.center_bounds(frame);
        if center[0] < bx[0] || center[0] > bx[1] || center[1] < by[0] || center[1] > by[1] {
            return f64::NEG_INFINITY;
        }
        -((bx[1] - bx[0]) * (by[1] - by[0])).ln()
    }
}

/// Pixel-grid coverage tallies for a configuration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoverageSummary {
    /// Pixels covered by at least two objects.
    pub multi_pixels: u64,
    /// Sum over pixels of C(coverage, 2).
    pub pair_overlap_pixels: u64,
    /// Pixels covered by at least three objects.
    pub triple_pixels: u64,
}

/// Count coverage by rasterizing every object in the configuration.
pub fn coverage_summary(cfg: &Configuration, frame: &Frame) -> CoverageSummary {
    let mut counts = vec![0u16; frame.pixel_count()];
    for obj in &cfg.objects {
        for &p in &rasterize(obj, frame) {
            counts[p as usize] += 1;
        }
    }
    let mut s = CoverageSummary::default();
    for &c in &counts {
        let c = c as u64;
        if c >= 2 {
            s.multi_pixels += 1;
            s.pair_overlap_pixels += c * (c - 1) / 2;
        }
        if c >= 3 {
            s.triple_pixels += 1;
        }
    }
    s
}

/// Interaction exponent from precomputed coverage tallies. This is the one
/// place that turns pixel counts into physical areas.
pub fn interaction_exponent(
    gamma: InteractionParams,
    m: usize,
    coverage: &CoverageSummary,
    pixel_area: f64,
    mode: InteractionMode,
) -> f64 {
    match mode {
        InteractionMode::AreaOfMultiCoverage => {
            -gamma.gamma1 * m as f64 - gamma.gamma2 * coverage.multi_pixels as f64 * pixel_area
        }
        InteractionMode::TwoWayPairwise => {
            if coverage.triple_pixels > 0 {
                return f64::NEG_INFINITY;
            }
            -gamma.gamma1 * m as f64
                - gamma.gamma2 * coverage.pair_overlap_pixels as f64 * pixel_area
        }
    }
}

/// Unnormalized log density of the area-interaction prior over locations
/// and count: `-gamma1 * m - gamma2 * S` with `S` the multiply-covered area.
pub fn log_area_interaction_unnorm(
    cfg: &Configuration,
    gamma: InteractionParams,
    frame: &Frame,
) -> f64 {
    let cov = coverage_summary(cfg, frame);
    interaction_exponent(
        gamma,
        cfg.count(),
        &cov,
        frame.pixel_area,
        InteractionMode::AreaOfMultiCoverage,
    )
}

/// Unnormalized log density of the two-way interaction variant. Returns
/// negative infinity when any pixel is covered three or more times.
pub fn log_two_way_unnorm(cfg: &Configuration, gamma: InteractionParams, frame: &Frame) -> f64 {
    let cov = coverage_summary(cfg, frame);
    interaction_exponent(gamma, cfg.count(), &cov, frame.pixel_area, InteractionMode::TwoWayPairwise)
}

/// Rotation prior density on (0, pi]: `(|cos t| + 1/pi) / 3`.
pub fn rotation_log_density(theta: f64) -> f64 {
    let t = fold_rotation(theta);
    if t <= 0.0 || t > std::f64::consts::PI {
        return f64::NEG_INFINITY;
    }
    ((t.cos().abs() + std::f64::consts::FRAC_1_PI) / 3.0).ln()
}

/// Map a canonical (-pi, pi] rotation onto the prior support (0, pi].
pub fn fold_rotation(theta: f64) -> f64 {
    if theta <= 0.0 && theta > -std::f64::consts::PI {
        theta + std::f64::consts::PI
    } else {
        theta
    }
}

/// Analytic CDF of the rotation prior on (0, pi].
pub fn rotation_cdf(theta: f64) -> f64 {
    let pi = std::f64::consts::PI;
    let t = theta.clamp(0.0, pi);
    let sin_part = if t <= pi / 2.0 { t.sin() } else { 2.0 - t.sin() };
    (sin_part + t / pi) / 3.0
}

fn rotation_inverse_table() -> &'static Vec<f64> {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let knots = 4096;
        let pi = std::f64::consts::PI;
        (0..=knots)
            .map(|k| {
                let u = k as f64 / knots as f64;
                // Bisection; the CDF is strictly increasing.
                let (mut lo, mut hi) = (0.0, pi);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if rotation_cdf(mid) < u {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            })
            .collect()
    })
}

/// Inverse-CDF draw from the rotation prior via a precomputed monotone
/// table, polished with one Newton step.
pub fn sample_rotation<R: Rng>(rng: &mut R) -> f64 {
    let table = rotation_inverse_table();
    let u: f64 = rng.random();
    let pos = u * (table.len() - 1) as f64;
    let i = (pos.floor() as usize).min(table.len() - 2);
    let t = pos - i as f64;
    let mut theta = table[i] * (1.0 - t) + table[i + 1] * t;
    let density = (theta.cos().abs() + std::f64::consts::FRAC_1_PI) / 3.0;
    theta -= (rotation_cdf(theta) - u) / density;
    theta.clamp(f64::MIN_POSITIVE, std::f64::consts::PI)
}

/// Log prior of one object's marks (scale, rotation, pure parameter,
/// template); the center is part of the interaction prior, not of this
/// term. Out-of-support marks yield negative infinity.
pub fn log_mark_prior(obj: &ObjectParams, cfg: &PriorConfig) -> f64 {
    let mut lp = 0.0;
    if obj.scale <= 0.0 || obj.scale >= cfg.s_max {
        return f64::NEG_INFINITY;
    }
    lp -= cfg.s_max.ln();
    if obj.template != Template::Circle {
        lp += rotation_log_density(obj.rotation);
    }
    match (cfg.pure_params(obj.template), obj.pure) {
        (None, None) => {}
        (Some(p), Some(g)) => lp += p.log_density(g),
        _ => return f64::NEG_INFINITY,
    }
    if !cfg.templates.contains(&obj.template) {
        return f64::NEG_INFINITY;
    }
    lp -= (cfg.templates.len() as f64).ln();
    lp
}

/// Improper intensity prior: sum of `-log(sigma_i^2)`.
pub fn log_intensity_prior(ints: &IntensityParams) -> f64 {
    let mut lp = 0.0;
    for &v in &ints.variances {
        if !(v > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp -= v.ln();
    }
    lp
}

/// Truncation box applied to the intensity prior by the sampler.
pub fn intensity_in_support(ints: &IntensityParams, cfg: &PriorConfig) -> bool {
    let (mu_lo, mu_hi) = cfg.intensity_mean_range;
    let (v_lo, v_hi) = cfg.intensity_var_range;
    ints.means.iter().all(|&m| m >= mu_lo && m <= mu_hi)
        && ints.variances.iter().all(|&v| v >= v_lo && v <= v_hi)
}

/// Log hyperprior of the interaction parameters.
pub fn log_gamma_prior(gamma: InteractionParams, cfg: &PriorConfig) -> f64 {
    cfg.gamma1_hyper.log_density(gamma.gamma1) + cfg.gamma2_hyper.log_density(gamma.gamma2)
}

/// Draw a full set of object marks from the priors. `template` fixes the
/// family; `None` draws it uniformly from the catalog.
pub fn sample_mark_prior<R: Rng>(
    template: Option<Template>,
    cfg: &PriorConfig,
    frame: &Frame,
    rng: &mut R,
) -> ObjectParams {
    let template =
        template.unwrap_or_else(|| cfg.templates[rng.random_range(0..cfg.templates.len())]);
    let (bx, by) = cfg.center_bounds(frame);
    let center = [rng.random_range(bx[0]..bx[1]), rng.random_range(by[0]..by[1])];
    let mut scale = 0.0;
    while !(scale > 0.0) {
        scale = rng.random_range(0.0..cfg.s_max);
    }
    let rotation = if template == Template::Circle { 0.0 } else { sample_rotation(rng) };
    let pure = cfg.pure_params(template).map(|p| p.sample(rng));
    ObjectParams { center, scale, rotation, template, pure }
}
