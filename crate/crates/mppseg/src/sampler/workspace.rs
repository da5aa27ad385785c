//! Incremental pixel bookkeeping for the chain.
//!
//! The workspace tracks, per pixel, a bitmask of covering objects plus the
//! owner under the minimum-mean rule, and per label the exact sufficient
//! statistics (count, sum, sum of squares) of the image values it owns.
//! Those sums are integer-valued, so the log likelihood derived from them is
//! a pure function of the discrete ownership state: no floating-point drift
//! accumulates across incremental updates, which keeps checkpoint-resume
//! runs bit-identical with uninterrupted ones.
//!
//! Coverage tallies (multiply covered pixels, pairwise overlap pixel count,
//! triple coverage) update in O(changed pixels) per move.

use crate::geometry::{rasterize, Configuration, Frame, ObjectParams};
use crate::likelihood::{Image, IntensityParams};
use crate::prior::CoverageSummary;

/// Upper limit on simultaneously live objects (one bit per object).
pub const MAX_OBJECTS: usize = 64;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct LabelStats {
    n: f64,
    sum_y: f64,
    sum_y2: f64,
}

impl LabelStats {
    #[inline]
    fn add(&mut self, y: f64) {
        self.n += 1.0;
        self.sum_y += y;
        self.sum_y2 += y * y;
    }

    #[inline]
    fn remove(&mut self, y: f64) {
        self.n -= 1.0;
        self.sum_y -= y;
        self.sum_y2 -= y * y;
    }

    #[inline]
    fn log_likelihood(&self, mean: f64, variance: f64) -> f64 {
        -0.5 * self.n * (2.0 * std::f64::consts::PI * variance).ln()
            - (self.sum_y2 - 2.0 * mean * self.sum_y + self.n * mean * mean) / (2.0 * variance)
    }
}

#[derive(Debug, Clone)]
pub struct PixelWorkspace {
    pub frame: Frame,
    values: Vec<f64>,
    mask: Vec<u64>,
    owner: Vec<u16>,
    rasters: Vec<Vec<u32>>,
    pub multi_pixels: u64,
    pub pair_overlap_pixels: u64,
    pub triple_pixels: u64,
    stats: Vec<LabelStats>,
}

impl PixelWorkspace {
    pub fn build(cfg: &Configuration, ints: &IntensityParams, img: &Image, frame: Frame) -> Self {
        assert!(cfg.count() <= MAX_OBJECTS);
        let n = frame.pixel_count();
        let mut ws = PixelWorkspace {
            frame,
            values: (0..n).map(|p| img.value(p)).collect(),
            mask: vec![0; n],
            owner: vec![0; n],
            rasters: Vec::with_capacity(cfg.count()),
            multi_pixels: 0,
            pair_overlap_pixels: 0,
            triple_pixels: 0,
            stats: vec![LabelStats::default(); 1],
        };
        for p in 0..n {
            ws.stats[0].add(ws.values[p]);
        }
        for obj in &cfg.objects {
            ws.push_object(obj, ints);
        }
        ws
    }

    pub fn object_count(&self) -> usize {
        self.rasters.len()
    }

    pub fn raster(&self, i: usize) -> &[u32] {
        &self.rasters[i]
    }

    pub fn coverage(&self) -> CoverageSummary {
        CoverageSummary {
            multi_pixels: self.multi_pixels,
            pair_overlap_pixels: self.pair_overlap_pixels,
            triple_pixels: self.triple_pixels,
        }
    }

    /// Exact log likelihood for the current ownership state.
    pub fn log_likelihood(&self, ints: &IntensityParams) -> f64 {
        self.stats
            .iter()
            .enumerate()
            .map(|(k, st)| st.log_likelihood(ints.means[k], ints.variances[k]))
            .sum()
    }

    #[inline]
    fn set_owner(&mut self, p: usize, new: u16) {
        let old = self.owner[p];
        if old != new {
            let y = self.values[p];
            self.stats[old as usize].remove(y);
            self.stats[new as usize].add(y);
            self.owner[p] = new;
        }
    }

    #[inline]
    fn recompute_owner(&mut self, p: usize, means: &[f64]) {
        let mut bits = self.mask[p];
        let mut best = 0u16;
        let mut best_mean = f64::INFINITY;
        while bits != 0 {
            let i = bits.trailing_zeros() as usize;
            bits &= bits - 1;
            let mu = means[i + 1];
            if best == 0 || mu < best_mean {
                best = (i + 1) as u16;
                best_mean = mu;
            }
        }
        self.set_owner(p, best);
    }

    #[inline]
    fn add_cover_bit(&mut self, p: usize, bit: usize) {
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

    #[inline]
    fn remove_cover_bit(&mut self, p: usize, bit: usize) {
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

    /// Append a new object; `ints` must already contain its intensity entry.
    pub fn push_object(&mut self, obj: &ObjectParams, ints: &IntensityParams) {
        let bit = self.rasters.len();
        assert!(bit < MAX_OBJECTS, "object capacity exceeded");
        let raster = rasterize(obj, &self.frame);
        self.stats.push(LabelStats::default());
        debug_assert_eq!(self.stats.len(), ints.means.len());
        for &p in &raster {
            let p = p as usize;
            self.add_cover_bit(p, bit);
            self.recompute_owner(p, &ints.means);
        }
        self.rasters.push(raster);
    }

    /// Remove object `i`; `ints` must already have its intensity entry
    /// removed. Objects above `i` shift down by one.
    pub fn remove_object(&mut self, i: usize, ints: &IntensityParams) {
        let raster = std::mem::take(&mut self.rasters[i]);
        for &p in &raster {
            let p = p as usize;
            self.remove_cover_bit(p, i);
        }
        // Relabel the shifted objects' bits and owners.
        for k in (i + 1)..self.rasters.len() {
            let raster_k = std::mem::take(&mut self.rasters[k]);
            for &p in &raster_k {
                let p = p as usize;
                self.mask[p] = (self.mask[p] & !(1 << k)) | (1 << (k - 1));
                if self.owner[p] == (k + 1) as u16 {
                    self.owner[p] = k as u16;
                }
            }
            self.rasters[k] = raster_k;
        }
        // Merge the removed label's stats away before reindexing.
        let removed = self.stats.remove(i + 1);
        debug_assert_eq!(self.stats.len(), ints.means.len());
        let _ = removed;
        self.rasters.remove(i);
        // Owners that pointed at the removed object get reassigned; the
        // relabeling above kept owner indices for the survivors valid, but
        // pixels previously owned by `i` still carry a stale label.
        for &p in &raster {
            let p = p as usize;
            if self.owner[p] == (i + 1) as u16 {
                // Stats for the stale label were dropped; reset the owner
                // slot without a transfer and recount the pixel from its
                // mask.
                let y = self.values[p];
                self.stats[0].add(y);
                self.owner[p] = 0;
            }
            self.recompute_owner(p, &ints.means);
        }
    }

    /// Insert an object at position `i`, shifting higher indices up; `ints`
    /// must already contain its intensity entry at `i + 1`. This is the
    /// exact inverse of `remove_object`, used to revert rejected removals.
    pub fn insert_object(&mut self, i: usize, obj: &ObjectParams, ints: &IntensityParams) {
        let m_old = self.rasters.len();
        assert!(i <= m_old && m_old < MAX_OBJECTS);
        for k in (i..m_old).rev() {
            let raster_k = std::mem::take(&mut self.rasters[k]);
            for &p in &raster_k {
                let p = p as usize;
                self.mask[p] = (self.mask[p] & !(1 << k)) | (1 << (k + 1));
                if self.owner[p] == (k + 1) as u16 {
                    self.owner[p] = (k + 2) as u16;
                }
            }
            self.rasters[k] = raster_k;
        }
        self.stats.insert(i + 1, LabelStats::default());
        debug_assert_eq!(self.stats.len(), ints.means.len());
        let raster = rasterize(obj, &self.frame);
        for &p in &raster {
            let p = p as usize;
            self.add_cover_bit(p, i);
            self.recompute_owner(p, &ints.means);
        }
        self.rasters.insert(i, raster);
    }

    /// Replace object `i`'s marks; the intensity vectors are unchanged.
    pub fn replace_object(&mut self, i: usize, obj: &ObjectParams, ints: &IntensityParams) {
        let new_raster = rasterize(obj, &self.frame);
        let old_raster = std::mem::take(&mut self.rasters[i]);
        // Walk both sorted pixel lists; only symmetric-difference pixels
        // change coverage or ownership.
        let (mut a, mut b) = (0usize, 0usize);
        while a < old_raster.len() || b < new_raster.len() {
            let pa = old_raster.get(a).copied();
            let pb = new_raster.get(b).copied();
            match (pa, pb) {
                (Some(x), Some(y)) if x == y => {
                    a += 1;
                    b += 1;
                }
                (Some(x), Some(y)) if x < y => {
                    let p = x as usize;
                    self.remove_cover_bit(p, i);
                    self.recompute_owner(p, &ints.means);
                    a += 1;
                }
                (Some(_), None) => {
                    let p = old_raster[a] as usize;
                    self.remove_cover_bit(p, i);
                    self.recompute_owner(p, &ints.means);
                    a += 1;
                }
                (Some(_) | None, Some(y)) => {
                    let p = y as usize;
                    self.add_cover_bit(p, i);
                    self.recompute_owner(p, &ints.means);
                    b += 1;
                }
                (None, None) => unreachable!(),
            }
        }
        self.rasters[i] = new_raster;
    }

    /// Re-evaluate ownership of object `i`'s pixels after its mean changed;
    /// `ints` already holds the new mean. Only multiply covered pixels can
    /// change owner.
    pub fn mean_updated(&mut self, i: usize, ints: &IntensityParams) {
        let raster = std::mem::take(&mut self.rasters[i]);
        for &p in &raster {
            let p = p as usize;
            if self.mask[p].count_ones() >= 2 {
                self.recompute_owner(p, &ints.means);
            }
        }
        self.rasters[i] = raster;
    }

    /// Full rebuild used at checkpoint boundaries; in debug builds it also
    /// asserts the incremental state matches a from-scratch construction.
    pub fn refresh(&mut self, cfg: &Configuration, ints: &IntensityParams, img: &Image) {
        let fresh = PixelWorkspace::build(cfg, ints, img, self.frame);
        debug_assert_eq!(self.mask, fresh.mask, "coverage mask drifted");
        debug_assert_eq!(self.owner, fresh.owner, "ownership drifted");
        debug_assert_eq!(self.stats, fresh.stats, "label statistics drifted");
        debug_assert_eq!(
            (self.multi_pixels, self.pair_overlap_pixels, self.triple_pixels),
            (fresh.multi_pixels, fresh.pair_overlap_pixels, fresh.triple_pixels),
            "coverage tallies drifted"
        );
        *self = fresh;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Template;
    use crate::likelihood::{build_label_map, log_likelihood};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn circle(x: f64, y: f64, s: f64) -> ObjectParams {
        ObjectParams::new([x, y], s, 0.0, Template::Circle, None).unwrap()
    }

    fn random_image(rng: &mut StdRng, w: u32, h: u32) -> Image {
        let data = (0..(w * h) as usize).map(|_| rng.random_range(30..220) as u16).collect();
        Image::new(w, h, data).unwrap()
    }

    #[track_caller]
    fn assert_consistent(ws: &PixelWorkspace, cfg: &Configuration, ints: &IntensityParams, img: &Image) {
        let frame = ws.frame;
        let map = build_label_map(cfg, ints, &frame).unwrap();
        assert_eq!(ws.owner, map.owner);
        let full = log_likelihood(img, cfg, ints, &frame).unwrap();
        assert_relative_eq!(ws.log_likelihood(ints), full, epsilon = 1e-8);
        let cov = crate::prior::coverage_summary(cfg, &frame);
        assert_eq!(ws.coverage(), cov);
    }

    #[test]
    fn incremental_updates_match_full_rebuilds() {
        let frame = Frame::new(48, 48);
        let mut rng = StdRng::seed_from_u64(31);
        let img = random_image(&mut rng, 48, 48);

        let mut cfg = Configuration::default();
        let mut ints = IntensityParams::new(vec![160.0], vec![25.0]).unwrap();
        let mut ws = PixelWorkspace::build(&cfg, &ints, &img, frame);

        // Births.
        for k in 0..5 {
            let obj = circle(
                rng.random_range(5.0..43.0),
                rng.random_range(5.0..43.0),
                rng.random_range(3.0..9.0),
            );
            cfg.objects.push(obj.clone());
            ints.means.push(40.0 + 10.0 * k as f64);
            ints.variances.push(rng.random_range(2.0..30.0));
            ws.push_object(&obj, &ints);
            assert_consistent(&ws, &cfg, &ints, &img);
        }

        // Mark moves.
        for _ in 0..30 {
            let i = rng.random_range(0..cfg.count());
            let obj = circle(
                rng.random_range(0.0..48.0),
                rng.random_range(0.0..48.0),
                rng.random_range(2.0..10.0),
            );
            cfg.objects[i] = obj.clone();
            ws.replace_object(i, &obj, &ints);
            assert_consistent(&ws, &cfg, &ints, &img);
        }

        // Mean updates that reshuffle ownership.
        for _ in 0..10 {
            let i = rng.random_range(0..cfg.count());
            ints.means[i + 1] = rng.random_range(35.0..120.0);
            ws.mean_updated(i, &ints);
            assert_consistent(&ws, &cfg, &ints, &img);
        }

        // Deaths from the middle.
        while cfg.count() > 0 {
            let i = rng.random_range(0..cfg.count());
            cfg.objects.remove(i);
            ints.means.remove(i + 1);
            ints.variances.remove(i + 1);
            ws.remove_object(i, &ints);
            assert_consistent(&ws, &cfg, &ints, &img);
        }

        ws.refresh(&cfg, &ints, &img);
        assert_consistent(&ws, &cfg, &ints, &img);
    }
}
