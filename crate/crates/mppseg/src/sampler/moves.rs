//! Proposal kernels targeting the pseudo posterior.
//!
//! All acceptance ratios are computed in log space. Proposals drawn from the
//! corresponding priors (birth marks, swap auxiliaries) cancel exactly
//! against the prior factors they introduce, so the ratios below only carry
//! the terms that do not cancel. A rejected proposal restores the workspace
//! by applying the old parameters again; every bookkeeping update is exact,
//! so apply-then-revert leaves the state bit-identical.

use rand::Rng;
use rand_distr::Distribution;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::geometry::{Configuration, Frame, ObjectParams, Template};
use crate::prior::{
    interaction_exponent, log_gamma_prior, log_mark_prior, sample_mark_prior, sample_rotation,
    InteractionParams, PriorConfig,
};

use super::workspace::PixelWorkspace;
use super::{ChainSinks, ChainState, MoveKind, MoveStats, SamplerConfig};

pub(crate) struct MoveCtx<'a> {
    pub frame: Frame,
    pub priors: &'a PriorConfig,
    pub scfg: &'a SamplerConfig,
}

#[inline]
fn accept<R: Rng>(rng: &mut R, log_ratio: f64) -> bool {
    if log_ratio >= 0.0 {
        true
    } else if log_ratio == f64::NEG_INFINITY {
        false
    } else {
        rng.random::<f64>().ln() < log_ratio
    }
}

#[inline]
fn normal_step<R: Rng>(rng: &mut R, step: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    step * z
}

fn interaction_log(ws: &PixelWorkspace, m: usize, gamma: InteractionParams, ctx: &MoveCtx) -> f64 {
    interaction_exponent(
        gamma,
        m,
        &ws.coverage(),
        ctx.frame.pixel_area,
        ctx.priors.interaction_mode,
    )
}

fn log_object_prior(obj: &ObjectParams, ctx: &MoveCtx) -> f64 {
    log_mark_prior(obj, ctx.priors) + ctx.priors.log_center_prior(obj.center, &ctx.frame)
}

/// Log density of the uniform mean proposal used by birth and split.
fn log_q_mean(ctx: &MoveCtx, mu: f64) -> f64 {
    let (lo, hi) = ctx.priors.intensity_mean_range;
    if mu < lo || mu > hi {
        f64::NEG_INFINITY
    } else {
        -(hi - lo).ln()
    }
}

fn sample_q_mean<R: Rng>(ctx: &MoveCtx, rng: &mut R) -> f64 {
    let (lo, hi) = ctx.priors.intensity_mean_range;
    rng.random_range(lo..hi)
}

/// Log density of the log-uniform variance proposal used by birth and split.
fn log_q_variance(ctx: &MoveCtx, v: f64) -> f64 {
    let (lo, hi) = ctx.priors.intensity_var_range;
    if v < lo || v > hi {
        f64::NEG_INFINITY
    } else {
        -v.ln() - (hi.ln() - lo.ln()).ln()
    }
}

fn sample_q_variance<R: Rng>(ctx: &MoveCtx, rng: &mut R) -> f64 {
    let (lo, hi) = ctx.priors.intensity_var_range;
    (rng.random_range(lo.ln()..hi.ln())).exp()
}

/// One Metropolis-within-Gibbs sweep: random-walk updates of every object's
/// center, scale, rotation and pure parameter, then of every label's mean
/// and variance.
pub(crate) fn sweep_marks_and_intensities(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    stats: &mut MoveStats,
    iteration: u64,
    sinks: &mut ChainSinks,
) -> Result<()> {
    let m = state.cfg.count();
    for i in 0..m {
        for kind in [MoveKind::Center, MoveKind::Scale, MoveKind::Rotation, MoveKind::Pure] {
            let old = state.cfg.objects[i].clone();
            let mut new = old.clone();
            match kind {
                MoveKind::Center => {
                    new.center[0] += normal_step(&mut state.rng, ctx.scfg.steps.center);
                    new.center[1] += normal_step(&mut state.rng, ctx.scfg.steps.center);
                }
                MoveKind::Scale => {
                    new.scale += normal_step(&mut state.rng, ctx.scfg.steps.scale);
                }
                MoveKind::Rotation => {
                    if old.template == Template::Circle {
                        continue;
                    }
                    // Wrap onto (0, pi]; the proposal is symmetric on the
                    // half-circle.
                    let pi = std::f64::consts::PI;
                    let mut t =
                        (old.rotation + normal_step(&mut state.rng, ctx.scfg.steps.rotation)) % pi;
                    if t <= 0.0 {
                        t += pi;
                    }
                    new.rotation = t;
                }
                MoveKind::Pure => {
                    let Some(g) = old.pure else { continue };
                    new.pure = Some(g + normal_step(&mut state.rng, ctx.scfg.steps.pure));
                }
                _ => unreachable!(),
            }
            let accepted = propose_replace(ctx, state, ws, i, new, &old);
            stats.record(kind, accepted);
            if let Some(trace) = sinks.move_trace.as_deref_mut() {
                writeln!(trace, "{iteration},{kind:?},,{accepted}").ok();
            }
        }
    }

    // Intensities: label 0 is the background.
    for k in 0..=m {
        intensity_mean_move(ctx, state, ws, stats, k);
        intensity_variance_move(ctx, state, ws, stats, k);
    }
    Ok(())
}

/// Shared apply/evaluate/revert for any single-object mark change where the
/// proposal is symmetric. Returns whether the proposal was accepted.
fn propose_replace(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    i: usize,
    new: ObjectParams,
    old: &ObjectParams,
) -> bool {
    let prior_new = log_object_prior(&new, ctx);
    if prior_new == f64::NEG_INFINITY {
        return false;
    }
    let prior_old = log_object_prior(old, ctx);
    let m = state.cfg.count();
    let before = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    ws.replace_object(i, &new, &state.ints);
    let after = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    let log_ratio = after - before + prior_new - prior_old;
    if accept(&mut state.rng, log_ratio) {
        state.cfg.objects[i] = new;
        true
    } else {
        ws.replace_object(i, old, &state.ints);
        false
    }
}

fn intensity_mean_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    stats: &mut MoveStats,
    k: usize,
) {
    let old = state.ints.means[k];
    let new = old + normal_step(&mut state.rng, ctx.scfg.steps.mean);
    let (lo, hi) = ctx.priors.intensity_mean_range;
    if new < lo || new > hi {
        stats.record(MoveKind::Mean, false);
        return;
    }
    let before = ws.log_likelihood(&state.ints);
    state.ints.means[k] = new;
    if k >= 1 {
        ws.mean_updated(k - 1, &state.ints);
    }
    let after = ws.log_likelihood(&state.ints);
    // Flat prior inside the box: the ratio is the likelihood change alone.
    if accept(&mut state.rng, after - before) {
        stats.record(MoveKind::Mean, true);
    } else {
        state.ints.means[k] = old;
        if k >= 1 {
            ws.mean_updated(k - 1, &state.ints);
        }
        stats.record(MoveKind::Mean, false);
    }
}

fn intensity_variance_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    stats: &mut MoveStats,
    k: usize,
) {
    let old = state.ints.variances[k];
    let new = old * normal_step(&mut state.rng, ctx.scfg.steps.variance).exp();
    let (lo, hi) = ctx.priors.intensity_var_range;
    if new < lo || new > hi {
        stats.record(MoveKind::Variance, false);
        return;
    }
    let before = ws.log_likelihood(&state.ints);
    state.ints.variances[k] = new;
    let after = ws.log_likelihood(&state.ints);
    // The 1/sigma^2 prior cancels against the multiplicative proposal's
    // correction, leaving the likelihood ratio.
    if accept(&mut state.rng, after - before) {
        stats.record(MoveKind::Variance, true);
    } else {
        state.ints.variances[k] = old;
        stats.record(MoveKind::Variance, false);
    }
}

/// Template swap on one uniformly chosen object. Center and scale are kept
/// (equal area, same center); rotation carries over between rotating
/// templates and is drawn fresh from its prior when leaving a circle; the
/// pure parameter of the target family is drawn from its prior. All those
/// auxiliary densities cancel against the prior factors they introduce, so
/// the acceptance ratio is the likelihood ratio times the interaction
/// ratio.
pub(crate) fn swap_move_random(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    stats: &mut MoveStats,
    iteration: u64,
    sinks: &mut ChainSinks,
) -> Result<()> {
    let m = state.cfg.count();
    if m == 0 {
        return Ok(());
    }
    let j = state.rng.random_range(0..m);
    let accepted = swap_move(ctx, state, ws, j)?;
    stats.record(MoveKind::Swap, accepted);
    if let Some(trace) = sinks.move_trace.as_deref_mut() {
        writeln!(trace, "{iteration},Swap,,{accepted}").ok();
    }
    Ok(())
}

pub(crate) fn swap_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    j: usize,
) -> Result<bool> {
    let old = state.cfg.objects[j].clone();
    let target = super::draw_template(&ctx.priors.templates, &mut state.rng);
    if target == old.template {
        // Identity move: ratio 1, always accepted.
        return Ok(true);
    }
    let rotation = if target == Template::Circle {
        0.0
    } else if old.template == Template::Circle {
        sample_rotation(&mut state.rng)
    } else {
        old.rotation
    };
    let pure = ctx.priors.pure_params(target).map(|p| p.sample(&mut state.rng));
    let new = ObjectParams { center: old.center, scale: old.scale, rotation, template: target, pure };

    let m = state.cfg.count();
    let before = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    ws.replace_object(j, &new, &state.ints);
    let after = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    let log_ratio = after - before;
    if accept(&mut state.rng, log_ratio) {
        state.cfg.objects[j] = new;
        Ok(true)
    } else {
        ws.replace_object(j, &old, &state.ints);
        Ok(false)
    }
}

/// Choose and run one dimension-changing move according to the configured
/// probabilities; with the remaining mass, do nothing.
pub(crate) fn dimension_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    stats: &mut MoveStats,
    iteration: u64,
    sinks: &mut ChainSinks,
) -> Result<()> {
    let probs = ctx.scfg.move_probabilities;
    let u: f64 = state.rng.random();
    let (kind, accepted) = if u < probs.birth {
        (MoveKind::Birth, birth_move(ctx, state, ws)?)
    } else if u < probs.birth + probs.death {
        (MoveKind::Death, death_move(ctx, state, ws)?)
    } else if u < probs.birth + probs.death + probs.split {
        (MoveKind::Split, split_move(ctx, state, ws)?)
    } else if u < probs.birth + probs.death + probs.split + probs.merge {
        (MoveKind::Merge, merge_move(ctx, state, ws)?)
    } else {
        return Ok(());
    };
    stats.record(kind, accepted);
    if let Some(trace) = sinks.move_trace.as_deref_mut() {
        writeln!(trace, "{iteration},{kind:?},,{accepted}").ok();
    }
    Ok(())
}

/// Birth: marks from their priors, intensities from the uniform/log-uniform
/// proposal box. Prior-drawn mark densities cancel; what remains is the
/// likelihood and interaction change, the new object's 1/sigma^2 prior
/// factor, the intensity proposal densities and the move-probability
/// bookkeeping.
pub(crate) fn birth_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
) -> Result<bool> {
    let m = state.cfg.count();
    if m >= ctx.scfg.max_objects {
        return Ok(false);
    }
    let obj = sample_mark_prior(None, ctx.priors, &ctx.frame, &mut state.rng);
    let mu = sample_q_mean(ctx, &mut state.rng);
    let var = sample_q_variance(ctx, &mut state.rng);

    let before = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    state.ints.means.push(mu);
    state.ints.variances.push(var);
    ws.push_object(&obj, &state.ints);
    let after = ws.log_likelihood(&state.ints) + interaction_log(ws, m + 1, state.gamma, ctx);

    let probs = ctx.scfg.move_probabilities;
    let log_ratio = after - before - var.ln() - log_q_mean(ctx, mu) - log_q_variance(ctx, var)
        + (probs.death / ((m + 1) as f64 * probs.birth)).ln();
    if accept(&mut state.rng, log_ratio) {
        state.cfg.objects.push(obj);
        Ok(true)
    } else {
        state.ints.means.pop();
        state.ints.variances.pop();
        ws.remove_object(m, &state.ints);
        Ok(false)
    }
}

/// Death: remove a uniformly chosen object; the reciprocal of birth.
pub(crate) fn death_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
) -> Result<bool> {
    let m = state.cfg.count();
    if m == 0 {
        return Ok(false);
    }
    let j = state.rng.random_range(0..m);
    let obj = state.cfg.objects[j].clone();
    let mu = state.ints.means[j + 1];
    let var = state.ints.variances[j + 1];

    let before = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    state.ints.means.remove(j + 1);
    state.ints.variances.remove(j + 1);
    ws.remove_object(j, &state.ints);
    let after = ws.log_likelihood(&state.ints) + interaction_log(ws, m - 1, state.gamma, ctx);

    let probs = ctx.scfg.move_probabilities;
    let log_ratio = after - before + var.ln() + log_q_mean(ctx, mu) + log_q_variance(ctx, var)
        + (m as f64 * probs.birth / probs.death).ln();
    if accept(&mut state.rng, log_ratio) {
        state.cfg.objects.remove(j);
        Ok(true)
    } else {
        state.ints.means.insert(j + 1, mu);
        state.ints.variances.insert(j + 1, var);
        // Reinsert at the original slot: push then rotate into place.
        reinsert_object(state, ws, j, obj);
        Ok(false)
    }
}

fn reinsert_object(state: &mut ChainState, ws: &mut PixelWorkspace, j: usize, obj: ObjectParams) {
    ws.insert_object(j, &obj, &state.ints);
    state.cfg.objects.insert(j, obj);
}

/// Auxiliary variables of the split/merge bijection.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAux {
    /// Distance between the two child centers.
    pub dist: f64,
    /// Angle of the line from the first child to the second, in (0, pi].
    pub angle: f64,
    /// Size balance in (-1, 1): the first child gets sqrt((1+b)/2) of the
    /// parent scale.
    pub size_balance: f64,
    /// Marks of the second child.
    pub rotation2: f64,
    pub template2: Template,
    pub pure2: Option<f64>,
    pub mean2: f64,
    pub var2: f64,
}

/// Split one object into two: scales preserve total squared scale (equal
/// area), centers sit `dist` apart along `angle` around the scale-weighted
/// center, the first child keeps the parent's remaining marks and
/// intensities and the second child's come from the auxiliaries.
pub fn split_transform(
    parent: &ObjectParams,
    mean: f64,
    var: f64,
    aux: &SplitAux,
) -> ((ObjectParams, f64, f64), (ObjectParams, f64, f64)) {
    let s = parent.scale;
    let s1 = s * ((1.0 + aux.size_balance) / 2.0).sqrt();
    let s2 = s * ((1.0 - aux.size_balance) / 2.0).sqrt();
    let (sin, cos) = aux.angle.sin_cos();
    let denom = s1 + s2;
    let c1 = [
        parent.center[0] - s2 * aux.dist / denom * cos,
        parent.center[1] - s2 * aux.dist / denom * sin,
    ];
    let c2 = [
        parent.center[0] + s1 * aux.dist / denom * cos,
        parent.center[1] + s1 * aux.dist / denom * sin,
    ];
    let child1 = ObjectParams {
        center: c1,
        scale: s1,
        rotation: parent.rotation,
        template: parent.template,
        pure: parent.pure,
    };
    let child2 = ObjectParams {
        center: c2,
        scale: s2,
        rotation: if aux.template2 == Template::Circle { 0.0 } else { aux.rotation2 },
        template: aux.template2,
        pure: aux.pure2,
    };
    ((child1, mean, var), (child2, aux.mean2, aux.var2))
}

/// Exact inverse of `split_transform`: the merged object keeps the first
/// child's marks and intensities, with scale sqrt(s1^2+s2^2) and the
/// scale-weighted middle as center; the auxiliaries record the second
/// child.
pub fn merge_transform(
    first: (&ObjectParams, f64, f64),
    second: (&ObjectParams, f64, f64),
) -> ((ObjectParams, f64, f64), SplitAux) {
    let (a, mu1, var1) = first;
    let (b, mu2, var2) = second;
    let s_h = (a.scale * a.scale + b.scale * b.scale).sqrt();
    let denom = a.scale + b.scale;
    let center = [
        (a.scale * a.center[0] + b.scale * b.center[0]) / denom,
        (a.scale * a.center[1] + b.scale * b.center[1]) / denom,
    ];
    let dx = b.center[0] - a.center[0];
    let dy = b.center[1] - a.center[1];
    let parent = ObjectParams {
        center,
        scale: s_h,
        rotation: a.rotation,
        template: a.template,
        pure: a.pure,
    };
    let aux = SplitAux {
        dist: (dx * dx + dy * dy).sqrt(),
        angle: dy.atan2(dx),
        size_balance: (a.scale * a.scale - b.scale * b.scale) / (s_h * s_h),
        rotation2: b.rotation,
        template2: b.template,
        pure2: b.pure,
        mean2: mu2,
        var2: var2,
    };
    ((parent, mu1, var1), aux)
}

/// Log Jacobian of the split map (center, scale, dist, angle, balance) ->
/// (two centers, two scales): `dist * scale / (2 sqrt(1 - balance^2))`.
/// The remaining coordinates transfer one-to-one.
pub fn split_log_jacobian(parent_scale: f64, dist: f64, size_balance: f64) -> f64 {
    dist.ln() + parent_scale.ln() - 2f64.ln() - 0.5 * (1.0 - size_balance * size_balance).ln()
}

fn pair_is_eligible(a: &ObjectParams, b: &ObjectParams, factor: f64) -> bool {
    let dx = a.center[0] - b.center[0];
    let dy = a.center[1] - b.center[1];
    (dx * dx + dy * dy).sqrt() <= factor * (a.scale + b.scale)
}

fn eligible_pairs(cfg: &Configuration, factor: f64) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..cfg.count() {
        for j in (i + 1)..cfg.count() {
            if pair_is_eligible(&cfg.objects[i], &cfg.objects[j], factor) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Sum of the log densities of the split auxiliaries that are actually
/// drawn: dist/2 from the scale prior, angle from the rotation prior,
/// balance uniform on (-1,1), the second child's template from the catalog,
/// its rotation/pure from their priors when the template has them, and its
/// intensities from the proposal box.
fn log_aux_density(ctx: &MoveCtx, aux: &SplitAux) -> f64 {
    let mut lq = 0.0;
    if aux.dist <= 0.0 || aux.dist >= 2.0 * ctx.priors.s_max {
        return f64::NEG_INFINITY;
    }
    lq -= (2.0 * ctx.priors.s_max).ln();
    lq += crate::prior::rotation_log_density(aux.angle);
    if aux.size_balance <= -1.0 || aux.size_balance >= 1.0 {
        return f64::NEG_INFINITY;
    }
    lq -= 2f64.ln();
    lq -= (ctx.priors.templates.len() as f64).ln();
    if aux.template2 != Template::Circle {
        lq += crate::prior::rotation_log_density(aux.rotation2);
    }
    match (ctx.priors.pure_params(aux.template2), aux.pure2) {
        (None, None) => {}
        (Some(p), Some(g)) => lq += p.log_density(g),
        _ => return f64::NEG_INFINITY,
    }
    lq += log_q_mean(ctx, aux.mean2);
    lq += log_q_variance(ctx, aux.var2);
    lq
}

fn draw_aux<R: Rng>(ctx: &MoveCtx, rng: &mut R) -> SplitAux {
    let dist = 2.0 * rng.random_range(0.0..ctx.priors.s_max);
    let angle = sample_rotation(rng);
    let size_balance = rng.random_range(-1.0..1.0);
    let template2 = super::draw_template(&ctx.priors.templates, rng);
    let rotation2 = if template2 == Template::Circle { 0.0 } else { sample_rotation(rng) };
    let pure2 = ctx.priors.pure_params(template2).map(|p| p.sample(rng));
    let mean2 = sample_q_mean(ctx, rng);
    let var2 = sample_q_variance(ctx, rng);
    SplitAux { dist, angle, size_balance, rotation2, template2, pure2, mean2, var2 }
}

/// Split move: pick an object uniformly, draw auxiliaries, replace it with
/// the two children. Auto-rejected when a child falls outside the extended
/// frame or the children would not qualify as a merge pair (the reverse
/// move must be possible).
pub(crate) fn split_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
) -> Result<bool> {
    let m = state.cfg.count();
    if m == 0 || m + 1 > ctx.scfg.max_objects {
        return Ok(false);
    }
    let h = state.rng.random_range(0..m);
    let parent = state.cfg.objects[h].clone();
    let mu_h = state.ints.means[h + 1];
    let var_h = state.ints.variances[h + 1];
    let aux = draw_aux(ctx, &mut state.rng);
    let ((child1, mu1, var1), (child2, mu2, var2)) = split_transform(&parent, mu_h, var_h, &aux);

    if !(child1.scale > 0.0) || !(child2.scale > 0.0) {
        return Ok(false);
    }
    if !pair_is_eligible(&child1, &child2, ctx.scfg.neighbor_distance_factor) {
        return Ok(false);
    }
    let prior_children = log_object_prior(&child1, ctx) + log_object_prior(&child2, ctx);
    if prior_children == f64::NEG_INFINITY {
        return Ok(false);
    }
    let prior_parent = log_object_prior(&parent, ctx);

    let before = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    // Replace the parent with child1, then append child2.
    state.ints.means[h + 1] = mu1;
    state.ints.variances[h + 1] = var1;
    ws.replace_object(h, &child1, &state.ints);
    state.ints.means.push(mu2);
    state.ints.variances.push(var2);
    ws.push_object(&child2, &state.ints);
    state.cfg.objects[h] = child1.clone();
    state.cfg.objects.push(child2.clone());
    let after = ws.log_likelihood(&state.ints) + interaction_log(ws, m + 1, state.gamma, ctx);

    let pairs_after = eligible_pairs(&state.cfg, ctx.scfg.neighbor_distance_factor).len();
    let probs = ctx.scfg.move_probabilities;
    let log_ratio = after - before + prior_children - prior_parent - var2.ln()
        + (probs.merge / pairs_after as f64).ln()
        - (probs.split / m as f64).ln()
        - log_aux_density(ctx, &aux)
        + split_log_jacobian(parent.scale, aux.dist, aux.size_balance);

    if accept(&mut state.rng, log_ratio) {
        Ok(true)
    } else {
        // Revert: drop child2, restore the parent.
        state.cfg.objects.pop();
        state.ints.means.pop();
        state.ints.variances.pop();
        ws.remove_object(m, &state.ints);
        state.ints.means[h + 1] = mu_h;
        state.ints.variances[h + 1] = var_h;
        ws.replace_object(h, &parent, &state.ints);
        state.cfg.objects[h] = parent;
        Ok(false)
    }
}

/// Merge move: pick an eligible pair uniformly, order it so the
/// first-to-second direction lies in the rotation prior's support, and
/// replace the pair by the merged object. The auxiliaries recorded from the
/// discarded child make the move the exact reverse of a split.
pub(crate) fn merge_move(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
) -> Result<bool> {
    let m = state.cfg.count();
    if m < 2 {
        return Ok(false);
    }
    let pairs = eligible_pairs(&state.cfg, ctx.scfg.neighbor_distance_factor);
    if pairs.is_empty() {
        return Ok(false);
    }
    let pairs_before = pairs.len();
    let (mut i, mut j) = pairs[state.rng.random_range(0..pairs.len())];
    // Order so the center line's angle lands in (0, pi], matching the
    // split's angle support.
    {
        let a = &state.cfg.objects[i];
        let b = &state.cfg.objects[j];
        let angle = (b.center[1] - a.center[1]).atan2(b.center[0] - a.center[0]);
        if !(angle > 0.0 && angle <= std::f64::consts::PI) {
            std::mem::swap(&mut i, &mut j);
        }
    }
    let first = state.cfg.objects[i].clone();
    let second = state.cfg.objects[j].clone();
    let (mu1, var1) = (state.ints.means[i + 1], state.ints.variances[i + 1]);
    let (mu2, var2) = (state.ints.means[j + 1], state.ints.variances[j + 1]);
    let ((parent, mu_h, var_h), aux) =
        merge_transform((&first, mu1, var1), (&second, mu2, var2));

    let prior_parent = log_object_prior(&parent, ctx);
    if prior_parent == f64::NEG_INFINITY {
        return Ok(false);
    }
    let lq_aux = log_aux_density(ctx, &aux);
    if lq_aux == f64::NEG_INFINITY {
        return Ok(false);
    }
    let prior_children = log_object_prior(&first, ctx) + log_object_prior(&second, ctx);

    let before = ws.log_likelihood(&state.ints) + interaction_log(ws, m, state.gamma, ctx);
    // Remove the second child, then morph the first into the parent.
    state.ints.means.remove(j + 1);
    state.ints.variances.remove(j + 1);
    ws.remove_object(j, &state.ints);
    state.cfg.objects.remove(j);
    let i_adj = if j < i { i - 1 } else { i };
    state.ints.means[i_adj + 1] = mu_h;
    state.ints.variances[i_adj + 1] = var_h;
    ws.replace_object(i_adj, &parent, &state.ints);
    state.cfg.objects[i_adj] = parent.clone();
    let after = ws.log_likelihood(&state.ints) + interaction_log(ws, m - 1, state.gamma, ctx);

    let probs = ctx.scfg.move_probabilities;
    let log_ratio = after - before + prior_parent - prior_children + var2.ln() + lq_aux
        + (probs.split / (m - 1) as f64).ln()
        - (probs.merge / pairs_before as f64).ln()
        - split_log_jacobian(parent.scale, aux.dist, aux.size_balance);

    if accept(&mut state.rng, log_ratio) {
        Ok(true)
    } else {
        // Revert: restore the first child, reinsert the second at its slot.
        state.ints.means[i_adj + 1] = mu1;
        state.ints.variances[i_adj + 1] = var1;
        ws.replace_object(i_adj, &first, &state.ints);
        state.cfg.objects[i_adj] = first;
        state.ints.means.insert(j + 1, mu2);
        state.ints.variances.insert(j + 1, var2);
        reinsert_object(state, ws, j, second);
        Ok(false)
    }
}

/// Componentwise multiplicative lognormal random walk on the interaction
/// parameters, against the pseudo posterior (interaction exponent plus
/// hyperprior). Returns true when either component changed.
pub(crate) fn update_gamma(
    ctx: &MoveCtx,
    state: &mut ChainState,
    ws: &mut PixelWorkspace,
    stats: &mut MoveStats,
) -> Result<bool> {
    let mut changed = false;
    let updates = [
        (ctx.scfg.gamma1_update, 0usize),
        (ctx.scfg.gamma2_update, 1usize),
    ];
    for (mode, which) in updates {
        if mode != super::GammaUpdate::Random {
            continue;
        }
        let old = state.gamma;
        let mut new = old;
        let step = normal_step(&mut state.rng, ctx.scfg.steps.gamma).exp();
        let (old_c, new_c) = if which == 0 {
            new.gamma1 = old.gamma1 * step;
            (old.gamma1, new.gamma1)
        } else {
            new.gamma2 = old.gamma2 * step;
            (old.gamma2, new.gamma2)
        };
        let m = state.cfg.count();
        let log_ratio = interaction_log(ws, m, new, ctx) - interaction_log(ws, m, old, ctx)
            + log_gamma_prior(new, ctx.priors)
            - log_gamma_prior(old, ctx.priors)
            + (new_c / old_c).ln();
        if accept(&mut state.rng, log_ratio) {
            state.gamma = new;
            changed = true;
            stats.record(MoveKind::Gamma, true);
        } else {
            stats.record(MoveKind::Gamma, false);
        }
    }
    Ok(changed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn random_object(rng: &mut StdRng) -> (ObjectParams, f64, f64) {
        let templates = crate::geometry::TEMPLATES;
        let t = templates[rng.random_range(0..4)];
        let pure = t.pure_param_bounds().map(|(a, b)| rng.random_range(a + 0.01..b - 0.01));
        let rotation = if t == Template::Circle { 0.0 } else { rng.random_range(0.001..3.1) };
        let obj = ObjectParams {
            center: [rng.random_range(0.0..200.0), rng.random_range(0.0..200.0)],
            scale: rng.random_range(1.0..40.0),
            rotation,
            template: t,
            pure,
        };
        (obj, rng.random_range(30.0..200.0), rng.random_range(1.0..100.0))
    }

    #[test]
    fn split_then_merge_is_identity() {
        let mut rng = StdRng::seed_from_u64(77);
        for _ in 0..10_000 {
            let (parent, mu, var) = random_object(&mut rng);
            let template2 = crate::geometry::TEMPLATES[rng.random_range(0..4)];
            let aux = SplitAux {
                dist: rng.random_range(0.1..60.0),
                angle: rng.random_range(1e-6..std::f64::consts::PI),
                size_balance: rng.random_range(-0.999..0.999),
                rotation2: if template2 == Template::Circle {
                    0.0
                } else {
                    rng.random_range(0.001..3.1)
                },
                template2,
                pure2: template2
                    .pure_param_bounds()
                    .map(|(a, b)| rng.random_range(a + 0.01..b - 0.01)),
                mean2: rng.random_range(30.0..200.0),
                var2: rng.random_range(1.0..100.0),
            };
            let (c1, c2) = split_transform(&parent, mu, var, &aux);
            let ((back, mu_b, var_b), aux_b) = merge_transform((&c1.0, c1.1, c1.2), (&c2.0, c2.1, c2.2));

            let tol = 1e-9;
            assert_relative_eq!(back.center[0], parent.center[0], epsilon = tol, max_relative = tol);
            assert_relative_eq!(back.center[1], parent.center[1], epsilon = tol, max_relative = tol);
            assert_relative_eq!(back.scale, parent.scale, max_relative = tol);
            assert_eq!(back.template, parent.template);
            assert_eq!(back.rotation, parent.rotation);
            assert_eq!(back.pure, parent.pure);
            assert_eq!((mu_b, var_b), (mu, var));
            assert_relative_eq!(aux_b.dist, aux.dist, max_relative = tol);
            assert_relative_eq!(aux_b.angle, aux.angle, epsilon = 1e-9, max_relative = tol);
            assert_relative_eq!(aux_b.size_balance, aux.size_balance, epsilon = tol, max_relative = tol);
            assert_eq!(aux_b.template2, aux.template2);
            assert_eq!(aux_b.rotation2, aux.rotation2);
            assert_eq!(aux_b.pure2, aux.pure2);
            assert_eq!((aux_b.mean2, aux_b.var2), (aux.mean2, aux.var2));
        }
    }

    #[test]
    fn equal_balance_gives_symmetric_children() {
        let parent =
            ObjectParams::new([50.0, 50.0], 10.0, 0.0, Template::Circle, None).unwrap();
        let aux = SplitAux {
            dist: 8.0,
            angle: std::f64::consts::FRAC_PI_2,
            size_balance: 0.0,
            rotation2: 0.0,
            template2: Template::Circle,
            pure2: None,
            mean2: 60.0,
            var2: 9.0,
        };
        let ((c1, _, _), (c2, _, _)) = split_transform(&parent, 50.0, 4.0, &aux);
        assert_relative_eq!(c1.scale, 10.0 / 2f64.sqrt(), max_relative = 1e-12);
        assert_relative_eq!(c2.scale, c1.scale, max_relative = 1e-12);
        // Children sit symmetrically around the parent center.
        assert_relative_eq!((c1.center[1] + c2.center[1]) / 2.0, 50.0, max_relative = 1e-12);
        assert_relative_eq!(c1.center[0], 50.0, max_relative = 1e-12);

        // The stated scale relation: 3-4-5 triangle.
        let a = ObjectParams::new([0.0, 0.0], 3.0, 0.0, Template::Circle, None).unwrap();
        let b = ObjectParams::new([2.0, 1.0], 4.0, 0.0, Template::Circle, None).unwrap();
        let ((merged, _, _), _) = merge_transform((&a, 50.0, 4.0), (&b, 60.0, 9.0));
        assert_relative_eq!(merged.scale, 5.0, max_relative = 1e-12);
    }

    #[test]
    fn numeric_jacobian_matches_analytic() {
        // Finite differences of the geometric split map against the closed
        // form, and the split*merge product against one.
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..50 {
            let x = rng.random_range(10.0..100.0);
            let y = rng.random_range(10.0..100.0);
            let s = rng.random_range(2.0..30.0);
            let dist = rng.random_range(0.5..40.0);
            let angle = rng.random_range(0.1..3.0);
            let balance = rng.random_range(-0.9..0.9);

            let f = |v: &[f64; 6]| -> [f64; 6] {
                let parent = ObjectParams {
                    center: [v[0], v[1]],
                    scale: v[2],
                    rotation: 0.0,
                    template: Template::Circle,
                    pure: None,
                };
                let aux = SplitAux {
                    dist: v[3],
                    angle: v[4],
                    size_balance: v[5],
                    rotation2: 0.0,
                    template2: Template::Circle,
                    pure2: None,
                    mean2: 0.0,
                    var2: 1.0,
                };
                let ((c1, _, _), (c2, _, _)) = split_transform(&parent, 0.0, 1.0, &aux);
                [c1.center[0], c1.center[1], c2.center[0], c2.center[1], c1.scale, c2.scale]
            };

            let x0 = [x, y, s, dist, angle, balance];
            let h = 1e-6;
            let mut jac = [[0.0f64; 6]; 6];
            for col in 0..6 {
                let mut hi = x0;
                let mut lo = x0;
                hi[col] += h;
                lo[col] -= h;
                let fh = f(&hi);
                let fl = f(&lo);
                for row in 0..6 {
                    jac[row][col] = (fh[row] - fl[row]) / (2.0 * h);
                }
            }
            let det = det6(&jac).abs();
            let analytic = split_log_jacobian(s, dist, balance).exp();
            assert_relative_eq!(det, analytic, max_relative = 1e-4);
        }
    }

    fn det6(m: &[[f64; 6]; 6]) -> f64 {
        // Gaussian elimination with partial pivoting.
        let mut a = *m;
        let mut det = 1.0;
        for c in 0..6 {
            let mut piv = c;
            for r in (c + 1)..6 {
                if a[r][c].abs() > a[piv][c].abs() {
                    piv = r;
                }
            }
            if a[piv][c] == 0.0 {
                return 0.0;
            }
            if piv != c {
                a.swap(piv, c);
                det = -det;
            }
            det *= a[c][c];
            for r in (c + 1)..6 {
                let factor = a[r][c] / a[c][c];
                for k in c..6 {
                    a[r][k] -= factor * a[c][k];
                }
            }
        }
        det
    }
}
