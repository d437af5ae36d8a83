//! Multi-round transform search: pretrain on the raw source, fine-tune a
//! copy per candidate on its transformed source, score it label-free, fit
//! the controller on everything validated so far and propose the next pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adain_val::{validation_reward, ValidationReport};
use crate::controller::{
    normalize_rewards, train_controller, update_candidates, CandidateRecord, ControllerParams,
    Normalizer, UpdateConfig,
};
use crate::dataset::{AnnotatedDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::imaging::DensityKernel;
use crate::netcore::{train, ModelConfig, ModelParams, TrainHyper, TrainLog};
use crate::rng;
use crate::transform_tree::{apply_transform, TransformSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub n_d: usize,
    pub rounds: usize,
    pub pretrain_steps: usize,
    pub candidate_steps: usize,
    pub final_steps: usize,
    pub n_pairs: usize,
    pub controller_steps: usize,
    pub controller_lr: f64,
    pub update: UpdateConfig,
    pub theta_max: f64,
    pub scale_min: f64,
    /// `(p_S, p_PT)`, fixed during search.
    pub splits: (f64, f64),
    /// Start the final model from a fresh initialization instead of the
    /// pretrained source model.
    pub final_from_scratch: bool,
    pub seed: u64,
    pub model: ModelConfigDef,
    pub hyper: TrainHyper,
    #[serde(skip)]
    pub kernel: DensityKernel,
}

/// Serializable mirror of [`ModelConfig`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfigDef {
    pub channels: usize,
    pub disc_hidden: usize,
}

impl Default for ModelConfigDef {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelConfigDef {
            channels: m.channels,
            disc_hidden: m.disc_hidden,
        }
    }
}

impl From<ModelConfigDef> for ModelConfig {
    fn from(m: ModelConfigDef) -> Self {
        ModelConfig {
            channels: m.channels,
            disc_hidden: m.disc_hidden,
        }
    }
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            n_d: 8,
            rounds: 3,
            pretrain_steps: 600,
            candidate_steps: 200,
            final_steps: 800,
            n_pairs: 32,
            controller_steps: 1000,
            controller_lr: 0.01,
            update: UpdateConfig::default(),
            theta_max: crate::transform_tree::DEFAULT_THETA_MAX,
            scale_min: 0.1,
            splits: (0.5, 0.5),
            final_from_scratch: true,
            seed: 0,
            model: ModelConfigDef::default(),
            hyper: TrainHyper::default(),
            kernel: DensityKernel::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n_d == 0 || self.rounds == 0 {
            return bad("n_d and rounds must be >= 1".into());
        }
        if self.candidate_steps == 0 || self.final_steps == 0 || self.n_pairs == 0 {
            return bad("candidate_steps, final_steps and n_pairs must be >= 1".into());
        }
        if !(self.scale_min > 0.0 && self.scale_min <= 1.0) {
            return bad(format!("scale_min {} must lie in (0, 1]", self.scale_min));
        }
        if self.model.channels == 0 || self.model.disc_hidden == 0 {
            return bad("model widths must be >= 1".into());
        }
        TransformSpec::identity()
            .with_splits(self.splits.0, self.splits.1)
            .validate(self.theta_max)?;
        self.hyper.validate()
    }

    pub fn normalizer(&self) -> Normalizer {
        Normalizer {
            theta_max: self.theta_max,
            scale_min: self.scale_min,
        }
    }

    fn seed(&self, name: &str) -> u64 {
        rng::derive(self.seed, name, 0)
    }

    /// Common tree seed: candidates differ only by their spec.
    pub fn tree_seed(&self) -> u64 {
        self.seed("tree")
    }

    pub fn pairing_seed(&self) -> u64 {
        self.seed("pairing")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateTrace {
    pub index: usize,
    pub spec: TransformSpec,
    pub reward: Option<f64>,
    pub report: Option<ValidationReport>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub round: usize,
    pub candidates: Vec<CandidateTrace>,
    /// Controller pool loss after fitting on every candidate validated so far.
    pub controller_loss: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub rounds: Vec<RoundTrace>,
    /// `(round, index)` of the best validated candidate.
    pub best: Option<(usize, usize)>,
    pub best_spec: Option<TransformSpec>,
    pub best_reward: Option<f64>,
}

impl SearchTrace {
    /// All validated candidates in trace order as `(round, spec, reward)`.
    pub fn validated(&self) -> Vec<(usize, TransformSpec, f64)> {
        self.rounds
            .iter()
            .flat_map(|r| {
                r.candidates
                    .iter()
                    .filter_map(move |c| c.reward.map(|w| (r.round, c.spec, w)))
            })
            .collect()
    }

    fn update_best(&mut self) {
        let mut best: Option<((usize, usize), TransformSpec, f64)> = None;
        for r in &self.rounds {
            for c in &r.candidates {
                if let Some(w) = c.reward {
                    if best.as_ref().is_none_or(|b| w > b.2) {
                        best = Some(((r.round, c.index), c.spec, w));
                    }
                }
            }
        }
        self.best = best.as_ref().map(|b| b.0);
        self.best_spec = best.as_ref().map(|b| b.1);
        self.best_reward = best.map(|b| b.2);
    }
}

/// Progress notifications from a running search.
#[derive(Clone, Debug)]
pub enum SearchEvent<'a> {
    Pretrained(&'a TrainLog),
    Candidate {
        round: usize,
        trace: &'a CandidateTrace,
        model: Option<&'a ModelParams>,
    },
    RoundDone(&'a RoundTrace),
}

/// Source-only model: density loss alone, discriminator left at its init.
pub fn pretrain_source(source: &AnnotatedDataset, cfg: &SearchConfig) -> Result<(ModelParams, TrainLog)> {
    let p0 = ModelParams::init(cfg.model.into(), cfg.seed("init"));
    if cfg.pretrain_steps == 0 {
        return Ok((p0, TrainLog::default()));
    }
    let hyper = TrainHyper {
        lambda: 0.0,
        ..cfg.hyper.clone()
    };
    train(&p0, source, &UnlabeledDataset::default(), cfg.pretrain_steps, &hyper, cfg.seed("pretrain"))
}

/// Fine-tunes a copy of `g_hat` on the transformed source and validates it.
pub fn evaluate_candidate(
    g_hat: &ModelParams,
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    spec: &TransformSpec,
    cfg: &SearchConfig,
) -> Result<(ModelParams, ValidationReport)> {
    let s_plus = apply_transform(source, spec, cfg.tree_seed(), &cfg.kernel, cfg.theta_max)?;
    let (g, _) = train(g_hat, &s_plus, target, cfg.candidate_steps, &cfg.hyper, cfg.seed("candidate"))?;
    let report = validation_reward(&g, source, target, cfg.n_pairs, cfg.pairing_seed())?;
    if !report.reward.is_finite() {
        return Err(Error::NonFinite {
            step: cfg.candidate_steps,
            detail: "validation reward".into(),
        });
    }
    Ok((g, report))
}

/// Result of one round.
pub struct RoundOutcome {
    pub trace: RoundTrace,
    pub controller: ControllerParams,
    pub next_pool: Vec<TransformSpec>,
    /// Trained candidate weights, `None` where the candidate failed.
    pub models: Vec<Option<ModelParams>>,
}

/// One round over `pool`. `history` gains this round's validated candidates
/// and is what the controller is fitted on.
#[allow(clippy::too_many_arguments)]
pub fn search_round(
    g_hat: &ModelParams,
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    pool: &[TransformSpec],
    controller: &ControllerParams,
    round: usize,
    history: &mut Vec<CandidateRecord>,
    cfg: &SearchConfig,
    on_event: &mut dyn FnMut(SearchEvent<'_>),
) -> Result<RoundOutcome> {
    let results: Vec<Result<(ModelParams, ValidationReport)>> = pool
        .par_iter()
        .map(|spec| evaluate_candidate(g_hat, source, target, spec, cfg))
        .collect();
    let norm = cfg.normalizer();
    let mut candidates = Vec::with_capacity(pool.len());
    let mut models = Vec::with_capacity(pool.len());
    for (index, (spec, res)) in pool.iter().zip(results).enumerate() {
        let trace = match res {
            Ok((model, report)) => {
                history.push(CandidateRecord {
                    spec: *spec,
                    d: norm.to_vec(spec),
                    reward: report.reward,
                    norm_reward: 0.0,
                    round,
                });
                models.push(Some(model));
                CandidateTrace {
                    index,
                    spec: *spec,
                    reward: Some(report.reward),
                    report: Some(report),
                    error: None,
                }
            }
            Err(e) => {
                models.push(None);
                CandidateTrace {
                    index,
                    spec: *spec,
                    reward: None,
                    report: None,
                    error: Some(e.to_string()),
                }
            }
        };
        on_event(SearchEvent::Candidate {
            round,
            trace: &trace,
            model: models.last().and_then(|m| m.as_ref()),
        });
        candidates.push(trace);
    }
    if candidates.iter().all(|c| c.reward.is_none()) {
        return Err(Error::RoundFailed(round));
    }
    normalize_rewards(history);
    let (controller, loss, next_pool) = if history.len() >= 4 {
        let (c, _) = train_controller(controller, history, cfg.controller_steps, cfg.controller_lr)?;
        let loss = crate::controller::pool_loss_value(&c, history)?;
        let next = update_candidates(
            &c,
            history,
            cfg.n_d,
            &cfg.update,
            &norm,
            cfg.splits,
            rng::derive(cfg.seed, "update", round as u64),
        )?;
        (c, Some(loss), next)
    } else {
        // too few points to fit a surrogate: explore at random
        let mut r = rng::stream(cfg.seed, "update", round as u64);
        let next = (0..cfg.n_d).map(|_| norm.random_spec(&mut r, cfg.splits)).collect();
        (controller.clone(), None, next)
    };
    let trace = RoundTrace {
        round,
        candidates,
        controller_loss: loss,
    };
    on_event(SearchEvent::RoundDone(&trace));
    Ok(RoundOutcome {
        trace,
        controller,
        next_pool,
        models,
    })
}

/// Seeded random initial pool.
pub fn initial_pool(cfg: &SearchConfig) -> Vec<TransformSpec> {
    let mut r = rng::stream(cfg.seed, "initial-pool", 0);
    let norm = cfg.normalizer();
    (0..cfg.n_d).map(|_| norm.random_spec(&mut r, cfg.splits)).collect()
}

pub struct SearchOutcome {
    pub best: TransformSpec,
    pub trace: SearchTrace,
    pub pretrained: ModelParams,
}

/// Pretrains, then runs `cfg.rounds` rounds starting from `pool` (or a
/// seeded random pool).
pub fn run_search_with(
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    cfg: &SearchConfig,
    pool: Option<Vec<TransformSpec>>,
    on_event: &mut dyn FnMut(SearchEvent<'_>),
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if source.is_empty() || target.is_empty() {
        return Err(Error::InvalidArgument("search needs non-empty source and target".into()));
    }
    let (g_hat, log) = pretrain_source(source, cfg)?;
    on_event(SearchEvent::Pretrained(&log));
    let mut pool = pool.unwrap_or_else(|| initial_pool(cfg));
    for s in &pool {
        s.validate(cfg.theta_max)?;
    }
    let mut controller = ControllerParams::init(cfg.seed("controller"));
    let mut history = Vec::new();
    let mut trace = SearchTrace::default();
    for round in 0..cfg.rounds {
        let out = search_round(
            &g_hat,
            source,
            target,
            &pool,
            &controller,
            round,
            &mut history,
            cfg,
            on_event,
        )?;
        trace.rounds.push(out.trace);
        controller = out.controller;
        pool = out.next_pool;
    }
    trace.update_best();
    let best = trace.best_spec.ok_or(Error::RoundFailed(cfg.rounds))?;
    Ok(SearchOutcome {
        best,
        trace,
        pretrained: g_hat,
    })
}

pub fn run_search(
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    cfg: &SearchConfig,
) -> Result<SearchOutcome> {
    run_search_with(source, target, cfg, None, &mut |_| {})
}

/// Retrains on `S+` built from `best`. With `lambda = 0` this is the
/// data-only arm.
pub fn final_train(
    source: &AnnotatedDataset,
    best: &TransformSpec,
    target: &UnlabeledDataset,
    cfg: &SearchConfig,
    pretrained: Option<&ModelParams>,
) -> Result<(ModelParams, TrainLog)> {
    cfg.validate()?;
    let s_plus = apply_transform(source, best, cfg.tree_seed(), &cfg.kernel, cfg.theta_max)?;
    let p0 = match (cfg.final_from_scratch, pretrained) {
        (false, Some(p)) => p.clone(),
        _ => ModelParams::init(cfg.model.into(), cfg.seed("final-init")),
    };
    let target = if cfg.hyper.lambda > 0.0 {
        target.clone()
    } else {
        UnlabeledDataset::default()
    };
    train(&p0, &s_plus, &target, cfg.final_steps, &cfg.hyper, cfg.seed("final"))
}

/// The four ablation arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Arm {
    NoAdapt,
    DataOnly,
    FeatureOnly,
    Full,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::NoAdapt, Arm::DataOnly, Arm::FeatureOnly, Arm::Full];

    pub fn name(self) -> &'static str {
        match self {
            Arm::NoAdapt => "no-adapt",
            Arm::DataOnly => "data-only",
            Arm::FeatureOnly => "feature-only",
            Arm::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.name() == s)
    }

    pub fn uses_transform(self) -> bool {
        matches!(self, Arm::DataOnly | Arm::Full)
    }

    pub fn uses_features(self) -> bool {
        matches!(self, Arm::FeatureOnly | Arm::Full)
    }
}

/// Trains one ablation arm; `best` is ignored by arms without data alignment.
pub fn train_arm(
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    arm: Arm,
    best: &TransformSpec,
    cfg: &SearchConfig,
) -> Result<(ModelParams, TrainLog)> {
    let spec = if arm.uses_transform() {
        *best
    } else {
        TransformSpec::identity().with_splits(cfg.splits.0, cfg.splits.1)
    };
    let mut c = cfg.clone();
    if !arm.uses_features() {
        c.hyper.lambda = 0.0;
    }
    final_train(source, &spec, target, &c, None)
}
