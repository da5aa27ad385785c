//! Two-stage MCMC over configurations, intensities and interaction
//! parameters.
//!
//! Stage one applies kernels that target the pseudo posterior (the posterior
//! with the interaction prior's normalizing constant stripped): a
//! Metropolis-within-Gibbs sweep over object marks and intensities, a
//! template swap, one reversible-jump move (birth/death/split/merge) and a
//! lognormal random-walk update of the interaction parameters. Stage two is
//! a Monte Carlo exchange step that corrects for the normalizing constant's
//! dependence on the interaction parameters; it accepts or rejects the
//! iteration's composite proposal.
//!
//! Everything is deterministic given the seed: one RNG drives the whole
//! chain and is serialized into checkpoints, and all pixel sums are exact,
//! so a resumed run reproduces an uninterrupted one bit for bit.

mod exchange;
mod moves;
mod prior_chain;
mod workspace;

pub use exchange::{mcmh_exchange, ExchangeOutcome, ExchangeScheme};
pub use moves::{merge_transform, split_log_jacobian, split_transform, SplitAux};
pub use prior_chain::PriorChain;
pub use workspace::{PixelWorkspace, MAX_OBJECTS};

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Configuration, Frame, Template};
use crate::likelihood::{Image, IntensityParams};
use crate::prior::{
    intensity_in_support, interaction_exponent, log_gamma_prior, log_intensity_prior,
    log_mark_prior, InteractionParams, PriorConfig,
};

/// Everything the sampler mutates, serializable for checkpoint/resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainState {
    pub cfg: Configuration,
    pub ints: IntensityParams,
    pub gamma: InteractionParams,
    pub iteration: u64,
    pub rng: ChaCha20Rng,
}

impl ChainState {
    pub fn validate(&self) -> Result<()> {
        if self.ints.means.len() != self.cfg.count() + 1 {
            return Err(Error::Argument(format!(
                "intensity vectors of length {} do not match {} objects",
                self.ints.means.len(),
                self.cfg.count()
            )));
        }
        if self.ints.variances.len() != self.ints.means.len() {
            return Err(Error::Argument("mean/variance length mismatch".into()));
        }
        if !(self.gamma.gamma1 > 0.0) || !(self.gamma.gamma2 > 0.0) {
            return Err(Error::Argument("interaction parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Whether a gamma component is sampled or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GammaUpdate {
    Fixed,
    Random,
}

/// Random-walk step sizes for the within-model kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepSizes {
    pub center: f64,
    pub scale: f64,
    pub rotation: f64,
    pub pure: f64,
    pub mean: f64,
    /// Log-scale step of the multiplicative variance proposal.
    pub variance: f64,
    /// Log-scale step of the multiplicative gamma proposal.
    pub gamma: f64,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes {
            center: 1.5,
            scale: 0.8,
            rotation: 0.25,
            pure: 0.08,
            mean: 2.5,
            variance: 0.35,
            gamma: 0.30,
        }
    }
}

/// Probabilities of proposing each dimension-changing move per iteration;
/// the remaining mass proposes none.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveProbabilities {
    pub birth: f64,
    pub death: f64,
    pub split: f64,
    pub merge: f64,
}

impl Default for MoveProbabilities {
    fn default() -> Self {
        MoveProbabilities { birth: 0.10, death: 0.10, split: 0.05, merge: 0.05 }
    }
}

impl MoveProbabilities {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.birth, self.death, self.split, self.merge];
        if parts.iter().any(|&p| !(0.0..=1.0).contains(&p)) || parts.iter().sum::<f64>() > 1.0 {
            return Err(Error::Config("move probabilities must lie in [0,1] and sum to at most 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub iterations: u64,
    pub burn_in: u64,
    pub thinning: u64,
    pub move_probabilities: MoveProbabilities,
    pub steps: StepSizes,
    /// Auxiliary draws per exchange step.
    pub mcmh_aux_count: usize,
    /// Prior-chain sweeps between consecutive auxiliary draws.
    pub mcmh_aux_sweeps: usize,
    pub exchange: ExchangeScheme,
    pub gamma1_update: GammaUpdate,
    pub gamma2_update: GammaUpdate,
    pub max_objects: usize,
    /// Merge eligibility: centers within this factor times the summed
    /// scales of the pair.
    pub neighbor_distance_factor: f64,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            iterations: 12_000,
            burn_in: 2_000,
            thinning: 10,
            move_probabilities: MoveProbabilities::default(),
            steps: StepSizes::default(),
            mcmh_aux_count: 20,
            mcmh_aux_sweeps: 3,
            exchange: ExchangeScheme::PriorConfigurations,
            gamma1_update: GammaUpdate::Fixed,
            gamma2_update: GammaUpdate::Random,
            max_objects: 40,
            neighbor_distance_factor: 1.2,
            checkpoint_every: 1_000,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        self.move_probabilities.validate()?;
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.mcmh_aux_count == 0 {
            return Err(Error::Config("mcmh_aux_count must be at least 1".into()));
        }
        if self.max_objects == 0 || self.max_objects > MAX_OBJECTS {
            return Err(Error::Config(format!("max_objects must be in 1..={MAX_OBJECTS}")));
        }
        if !(self.neighbor_distance_factor > 0.0) {
            return Err(Error::Config("neighbor_distance_factor must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        let steps = [
            self.steps.center,
            self.steps.scale,
            self.steps.rotation,
            self.steps.pure,
            self.steps.mean,
            self.steps.variance,
            self.steps.gamma,
        ];
        if steps.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Config("step sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Kinds of proposals the chain makes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MoveKind {
    Center,
    Scale,
    Rotation,
    Pure,
    Mean,
    Variance,
    Swap,
    Birth,
    Death,
    Split,
    Merge,
    Gamma,
    Exchange,
}

pub const MOVE_KINDS: [MoveKind; 13] = [
    MoveKind::Center,
    MoveKind::Scale,
    MoveKind::Rotation,
    MoveKind::Pure,
    MoveKind::Mean,
    MoveKind::Variance,
    MoveKind::Swap,
    MoveKind::Birth,
    MoveKind::Death,
    MoveKind::Split,
    MoveKind::Merge,
    MoveKind::Gamma,
    MoveKind::Exchange,
];

/// One proposal outcome, for diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct MoveRecord {
    pub iteration: u64,
    pub kind: MoveKind,
    pub summary: String,
    pub log_ratio: f64,
    pub accepted: bool,
}

/// Proposal/acceptance tallies per move kind.
#[derive(Debug, Clone, Default, Serialize)]
pub struct MoveStats {
    pub proposed: std::collections::BTreeMap<String, u64>,
    pub accepted: std::collections::BTreeMap<String, u64>,
}

impl MoveStats {
    pub(crate) fn record(&mut self, kind: MoveKind, accepted: bool) {
        let key = format!("{kind:?}");
        *self.proposed.entry(key.clone()).or_default() += 1;
        if accepted {
            *self.accepted.entry(key).or_default() += 1;
        }
    }

    pub fn acceptance_rate(&self, kind: MoveKind) -> f64 {
        let key = format!("{kind:?}");
        let p = self.proposed.get(&key).copied().unwrap_or(0);
        let a = self.accepted.get(&key).copied().unwrap_or(0);
        if p == 0 {
            0.0
        } else {
            a as f64 / p as f64
        }
    }
}

/// Output hooks for a run. All are optional.
#[derive(Default)]
pub struct ChainSinks<'a> {
    /// Receives one CSV record per thinned draw.
    pub samples: Option<&'a mut dyn Write>,
    /// Directory for periodic checkpoints.
    pub checkpoint_dir: Option<PathBuf>,
    /// Per-move diagnostics trace (CSV: iteration,kind,log_ratio,accepted).
    pub move_trace: Option<&'a mut dyn Write>,
}

/// What a finished run reports back.
#[derive(Debug, Clone)]
pub struct ChainSummary {
    pub iterations_run: u64,
    pub final_state: ChainState,
    pub move_stats: MoveStats,
    /// Best pseudo-posterior value seen and the iteration it occurred at.
    pub map_log_pseudo: f64,
    pub map_iteration: u64,
    pub emitted_samples: u64,
}

/// Log pseudo posterior of a state: likelihood, interaction exponent,
/// object priors (center and marks), intensity prior and gamma hyperprior.
/// The interaction prior's normalizing constant is deliberately absent.
pub fn log_pseudo_posterior(
    state: &ChainState,
    img: &Image,
    priors: &PriorConfig,
    frame: &Frame,
) -> Result<f64> {
    state.validate()?;
    let ll = crate::likelihood::log_likelihood(img, &state.cfg, &state.ints, frame)?;
    let cov = crate::prior::coverage_summary(&state.cfg, frame);
    let interaction = interaction_exponent(
        state.gamma,
        state.cfg.count(),
        &cov,
        frame.pixel_area,
        priors.interaction_mode,
    );
    let mut obj_priors = 0.0;
    for obj in &state.cfg.objects {
        obj_priors += log_mark_prior(obj, priors) + priors.log_center_prior(obj.center, &frame);
    }
    let mut ip = log_intensity_prior(&state.ints);
    if !intensity_in_support(&state.ints, priors) {
        ip = f64::NEG_INFINITY;
    }
    Ok(ll + interaction + obj_priors + ip + log_gamma_prior(state.gamma, priors))
}

/// CSV header comment for sample sinks.
pub const SAMPLE_HEADER: &str =
    "# iteration,m,gamma1,gamma2,log_pp,mu0,var0[,template,cx,cy,scale,rotation,pure,mu,var]*";

pub(crate) fn write_sample_record(
    w: &mut dyn Write,
    state: &ChainState,
    log_pp: f64,
) -> std::io::Result<()> {
    let mut line = format!(
        "{},{},{},{},{},{},{}",
        state.iteration,
        state.cfg.count(),
        state.gamma.gamma1,
        state.gamma.gamma2,
        log_pp,
        state.ints.means[0],
        state.ints.variances[0]
    );
    for (i, obj) in state.cfg.objects.iter().enumerate() {
        let pure = obj.pure.map(|g| g.to_string()).unwrap_or_default();
        line.push_str(&format!(
            ",{},{},{},{},{},{},{},{}",
            obj.template.tag(),
            obj.center[0],
            obj.center[1],
            obj.scale,
            obj.rotation,
            pure,
            state.ints.means[i + 1],
            state.ints.variances[i + 1]
        ));
    }
    writeln!(w, "{line}")
}

/// Write a checkpoint file (JSON) with enough to resume bit-identically.
pub fn write_checkpoint(state: &ChainState, path: &Path) -> Result<()> {
    let json = serde_json::to_string(state)
        .map_err(|e| Error::Runtime(format!("checkpoint serialization failed: {e}")))?;
    // Write-then-rename so an interrupted write cannot corrupt a resume.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, json)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ChainState> {
    let json = std::fs::read_to_string(path)?;
    let state: ChainState = serde_json::from_str(&json)
        .map_err(|e| Error::Runtime(format!("checkpoint parse failed: {e}")))?;
    state.validate()?;
    Ok(state)
}

/// Run the chain for `scfg.iterations` total iterations (counting any the
/// initial state has already completed, so a resumed run continues where
/// the checkpoint left off).
pub fn run_chain(
    img: &Image,
    priors: &PriorConfig,
    scfg: &SamplerConfig,
    init: ChainState,
    sinks: &mut ChainSinks,
) -> Result<ChainSummary> {
    scfg.validate()?;
    priors.validate()?;
    init.validate()?;
    let frame = Frame::with_pixel_area(img.width, img.height, init_frame_pixel_area(priors));
    runner::run(img, frame, priors, scfg, init, sinks)
}

/// Run with an explicit frame (pixel area included). The plain `run_chain`
/// uses a unit pixel area.
pub fn run_chain_with_frame(
    img: &Image,
    frame: Frame,
    priors: &PriorConfig,
    scfg: &SamplerConfig,
    init: ChainState,
    sinks: &mut ChainSinks,
) -> Result<ChainSummary> {
    scfg.validate()?;
    priors.validate()?;
    init.validate()?;
    if frame.width != img.width || frame.height != img.height {
        return Err(Error::Argument("frame does not match image dimensions".into()));
    }
    runner::run(img, frame, priors, scfg, init, sinks)
}

fn init_frame_pixel_area(_priors: &PriorConfig) -> f64 {
    1.0
}

mod runner {
    use super::*;
    use moves::MoveCtx;

    pub(super) fn run(
        img: &Image,
        frame: Frame,
        priors: &PriorConfig,
        scfg: &SamplerConfig,
        mut state: ChainState,
        sinks: &mut ChainSinks,
    ) -> Result<ChainSummary> {
        if state.cfg.count() > scfg.max_objects {
            return Err(Error::Argument(format!(
                "initial configuration has {} objects, above max_objects {}",
                state.cfg.count(),
                scfg.max_objects
            )));
        }
        let mut ws = PixelWorkspace::build(&state.cfg, &state.ints, img, frame);
        let mut stats = MoveStats::default();
        let ctx = MoveCtx { frame, priors, scfg };

        let mut map_log_pseudo = f64::NEG_INFINITY;
        let mut map_iteration = state.iteration;
        let mut emitted = 0u64;
        let start = state.iteration;

        while state.iteration < scfg.iterations {
            let it = state.iteration + 1;

            // Snapshot for the exchange step's composite accept/reject.
            let snapshot = (state.cfg.clone(), state.ints.clone(), state.gamma);

            moves::sweep_marks_and_intensities(&ctx, &mut state, &mut ws, &mut stats, it, sinks)?;
            moves::swap_move_random(&ctx, &mut state, &mut ws, &mut stats, it, sinks)?;
            moves::dimension_move(&ctx, &mut state, &mut ws, &mut stats, it, sinks)?;
            let gamma_changed = moves::update_gamma(&ctx, &mut state, &mut ws, &mut stats)?;

            let needs_exchange = match scfg.exchange {
                ExchangeScheme::Off => false,
                ExchangeScheme::PriorConfigurations => gamma_changed,
                ExchangeScheme::LikelihoodImages => true,
            };
            if needs_exchange {
                let outcome = exchange::exchange_step(
                    &snapshot.0,
                    &snapshot.1,
                    snapshot.2,
                    &state.cfg,
                    &state.ints,
                    state.gamma,
                    img,
                    frame,
                    priors,
                    scfg,
                    &mut state.rng,
                );
                stats.record(MoveKind::Exchange, outcome.accepted);
                if let Some(trace) = sinks.move_trace.as_deref_mut() {
                    writeln!(trace, "{it},Exchange,{},{}", outcome.log_r_hat, outcome.accepted)?;
                }
                if !outcome.accepted {
                    state.cfg = snapshot.0;
                    state.ints = snapshot.1;
                    state.gamma = snapshot.2;
                    ws = PixelWorkspace::build(&state.cfg, &state.ints, img, frame);
                }
            }

            state.iteration = it;
            debug_assert_eq!(state.ints.means.len(), state.cfg.count() + 1);
            debug_assert_eq!(state.ints.variances.len(), state.cfg.count() + 1);
            debug_assert!(state.cfg.objects.iter().all(|o| o.scale > 0.0));

            let log_pp = current_log_pseudo(&state, &ws, priors, frame);
            if log_pp > map_log_pseudo {
                map_log_pseudo = log_pp;
                map_iteration = it;
            }

            if it > scfg.burn_in && (it - scfg.burn_in) % scfg.thinning == 0 {
                if let Some(w) = sinks.samples.as_deref_mut() {
                    write_sample_record(w, &state, log_pp)?;
                    emitted += 1;
                }
            }

            if it % scfg.checkpoint_every == 0 {
                // Rebuild caches at fixed boundaries so a resumed run sees
                // exactly the state an uninterrupted run would have.
                ws.refresh(&state.cfg, &state.ints, img);
                if let Some(dir) = &sinks.checkpoint_dir {
                    std::fs::create_dir_all(dir)?;
                    write_checkpoint(&state, &dir.join(format!("checkpoint_{it}.json")))?;
                }
            }
        }

        Ok(ChainSummary {
            iterations_run: state.iteration - start,
            map_log_pseudo,
            map_iteration,
            emitted_samples: emitted,
            move_stats: stats,
            final_state: state,
        })
    }

    pub(super) fn current_log_pseudo(
        state: &ChainState,
        ws: &PixelWorkspace,
        priors: &PriorConfig,
        frame: Frame,
    ) -> f64 {
        let ll = ws.log_likelihood(&state.ints);
        let interaction = interaction_exponent(
            state.gamma,
            state.cfg.count(),
            &ws.coverage(),
            frame.pixel_area,
            priors.interaction_mode,
        );
        let mut obj_priors = 0.0;
        for obj in &state.cfg.objects {
            obj_priors += log_mark_prior(obj, priors) + priors.log_center_prior(obj.center, &frame);
        }
        let mut ip = log_intensity_prior(&state.ints);
        if !intensity_in_support(&state.ints, priors) {
            ip = f64::NEG_INFINITY;
        }
        ll + interaction + obj_priors + ip + log_gamma_prior(state.gamma, priors)
    }
}

/// Build a fresh chain state from parts, seeding the RNG.
pub fn init_chain_state(
    cfg: Configuration,
    ints: IntensityParams,
    gamma: InteractionParams,
    seed: u64,
) -> Result<ChainState> {
    use rand::SeedableRng;
    let state =
        ChainState { cfg, ints, gamma, iteration: 0, rng: ChaCha20Rng::seed_from_u64(seed) };
    state.validate()?;
    Ok(state)
}

/// Convenience: draw a template uniformly from a catalog.
pub(crate) fn draw_template<R: Rng>(catalog: &[Template], rng: &mut R) -> Template {
    catalog[rng.random_range(0..catalog.len())]
}
