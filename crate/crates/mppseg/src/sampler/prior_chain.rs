//! Likelihood-free chain over configurations, targeting the interaction
//! prior times the object priors at a fixed set of interaction parameters.
//!
//! Used in two places: the simulator equilibrates ground-truth
//! configurations with it, and the exchange step draws its auxiliary
//! configurations from it. Only coverage tallies are tracked, so moves cost
//! O(changed pixels).

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::geometry::{rasterize, Configuration, Frame, ObjectParams, Template};
use crate::prior::{
    interaction_exponent, log_mark_prior, sample_mark_prior, CoverageSummary,
    InteractionParams, PriorConfig,
};

pub struct PriorChain<'a> {
    pub frame: Frame,
    priors: &'a PriorConfig,
    pub gamma: InteractionParams,
    max_objects: usize,
    /// When set, birth/death moves are disabled (fixed object count).
    fixed_count: bool,
    pub cfg: Configuration,
    rasters: Vec<Vec<u32>>,
    mask: Vec<u64>,
    multi_pixels: u64,
    pair_overlap_pixels: u64,
    triple_pixels: u64,
}

impl<'a> PriorChain<'a> {
    pub fn new(
        cfg: Configuration,
        gamma: InteractionParams,
        priors: &'a PriorConfig,
        frame: Frame,
        max_objects: usize,
        fixed_count: bool,
    ) -> Self {
        let mut chain = PriorChain {
            frame,
            priors,
            gamma,
            max_objects: max_objects.min(super::MAX_OBJECTS),
            fixed_count,
            cfg: Configuration::default(),
            rasters: Vec::new(),
            mask: vec![0; frame.pixel_count()],
            multi_pixels: 0,
            pair_overlap_pixels: 0,
            triple_pixels: 0,
        };
        for obj in cfg.objects {
            chain.push(obj);
        }
        chain
    }

    pub fn coverage(&self) -> CoverageSummary {
        CoverageSummary {
            multi_pixels: self.multi_pixels,
            pair_overlap_pixels: self.pair_overlap_pixels,
            triple_pixels: self.triple_pixels,
        }
    }

    pub fn interaction_log(&self) -> f64 {
        interaction_exponent(
            self.gamma,
            self.cfg.count(),
            &self.coverage(),
            self.frame.pixel_area,
            self.priors.interaction_mode,
        )
    }

    fn add_bit(&mut self, p: usize, bit: usize) {
        let before = self.mask[p].count_ones() as u64;
        self.mask[p] |= 1 << bit;
        self.pair_overlap_pixels += before;
        if before == 1 {
            self.multi_pixels += 1;
        }
        if before == 2 {
            self.triple_pixels += 1;
        }
    }

    fn remove_bit(&mut self, p: usize, bit: usize) {
        self.mask[p] &= !(1 << bit);
        let after = self.mask[p].count_ones() as u64;
        self.pair_overlap_pixels -= after;
        if after == 1 {
            self.multi_pixels -= 1;
        }
        if after == 2 {
            self.triple_pixels -= 1;
        }
    }

    fn push(&mut self, obj: ObjectParams) {
        let bit = self.rasters.len();
        let raster = rasterize(&obj, &self.frame);
        for &p in &raster {
            self.add_bit(p as usize, bit);
        }
        self.rasters.push(raster);
        self.cfg.objects.push(obj);
    }

    fn pop(&mut self) {
        let raster = self.rasters.pop().expect("pop from empty chain");
        let bit = self.rasters.len();
        for &p in &raster {
            self.remove_bit(p as usize, bit);
        }
        self.cfg.objects.pop();
    }

    /// Death removes at an arbitrary index by swapping the last object into
    /// its slot first; object order carries no meaning here.
    fn remove_at(&mut self, i: usize) {
        let last = self.rasters.len() - 1;
        if i != last {
            // Move the last object's bit down to i.
            let raster_last = std::mem::take(&mut self.rasters[last]);
            let raster_i = std::mem::take(&mut self.rasters[i]);
            for &p in &raster_i {
                self.remove_bit(p as usize, i);
            }
            for &p in &raster_last {
                let p = p as usize;
                self.mask[p] = (self.mask[p] & !(1 << last)) | (1 << i);
            }
            self.rasters[i] = raster_last;
            self.rasters[last] = raster_i;
            self.cfg.objects.swap(i, last);
            self.rasters.pop();
            self.cfg.objects.pop();
        } else {
            self.pop();
        }
    }

    fn replace(&mut self, i: usize, obj: ObjectParams) {
        let raster = rasterize(&obj, &self.frame);
        let old = std::mem::take(&mut self.rasters[i]);
        for &p in &old {
            self.remove_bit(p as usize, i);
        }
        for &p in &raster {
            self.add_bit(p as usize, i);
        }
        self.rasters[i] = raster;
        self.cfg.objects[i] = obj;
    }

    fn accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
        log_ratio >= 0.0
            || (log_ratio > f64::NEG_INFINITY && rng.random::<f64>().ln() < log_ratio)
    }

    fn mark_move<R: Rng>(&mut self, i: usize, rng: &mut R) {
        let old = self.cfg.objects[i].clone();
        let mut new = old.clone();
        let step: f64 = StandardNormal.sample(rng);
        match rng.random_range(0..4u8) {
            0 => {
                let z2: f64 = StandardNormal.sample(rng);
                new.center[0] += self.priors.s_max / 6.0 * step;
                new.center[1] += self.priors.s_max / 6.0 * z2;
            }
            1 => new.scale += self.priors.s_max / 10.0 * step,
            2 => {
                if old.template == Template::Circle {
                    return;
                }
                let pi = std::f64::consts::PI;
                let mut t = (old.rotation + 0.5 * step) % pi;
                if t <= 0.0 {
                    t += pi;
                }
                new.rotation = t;
            }
            _ => {
                let Some(g) = old.pure else { return };
                let (a, b) = self.priors.pure_params(old.template).map(|p| (p.a, p.b)).unwrap();
                new.pure = Some(g + 0.1 * (b - a) * step);
            }
        }
        let prior_new = log_mark_prior(&new, self.priors)
            + self.priors.log_center_prior(new.center, &self.frame);
        if prior_new == f64::NEG_INFINITY {
            return;
        }
        let prior_old = log_mark_prior(&old, self.priors)
            + self.priors.log_center_prior(old.center, &self.frame);
        let before = self.interaction_log();
        self.replace(i, new);
        let log_ratio = self.interaction_log() - before + prior_new - prior_old;
        if !Self::accept(rng, log_ratio) {
            self.replace(i, old);
        }
    }

    fn birth_death<R: Rng>(&mut self, rng: &mut R) {
        let m = self.cfg.count();
        if rng.random::<f64>() < 0.5 {
            if m >= self.max_objects {
                return;
            }
            let obj = sample_mark_prior(None, self.priors, &self.frame, rng);
            let before = self.interaction_log();
            self.push(obj);
            // Prior-drawn marks cancel; only the interaction change and the
            // count bookkeeping remain.
            let log_ratio = self.interaction_log() - before - ((m + 1) as f64).ln();
            if !Self::accept(rng, log_ratio) {
                self.pop();
            }
        } else {
            if m == 0 {
                return;
            }
            let i = rng.random_range(0..m);
            let obj = self.cfg.objects[i].clone();
            let before = self.interaction_log();
            self.remove_at(i);
            let log_ratio = self.interaction_log() - before + (m as f64).ln();
            if !Self::accept(rng, log_ratio) {
                self.push(obj);
            }
        }
    }

    /// One sweep: a mark move per object plus one birth/death attempt when
    /// the count is free.
    pub fn sweep<R: Rng>(&mut self, rng: &mut R) {
        for i in 0..self.cfg.count() {
            self.mark_move(i, rng);
        }
        if !self.fixed_count {
            self.birth_death(rng);
        }
    }

    /// Physical multiply-covered area of the current configuration.
    pub fn multi_coverage_area(&self) -> f64 {
        self.multi_pixels as f64 * self.frame.pixel_area
    }
}
