//! Run configuration: one JSON document with a namespace per module. Unknown
//! keys are rejected with their full path; absent keys take the defaults
//! below.

use serde::{Deserialize, Serialize};

use crate::controller::UpdateConfig;
use crate::error::{Error, Result};
use crate::imaging::DensityKernel;
use crate::netcore::{DiscNorm, LrSchedule, TrainHyper};
use crate::rng;
use crate::search::{ModelConfigDef, SearchConfig};
use crate::synthcrowd::{DomainShift, SceneConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImagingSection {
    pub sigma: f64,
    pub kernel: usize,
}

impl Default for ImagingSection {
    fn default() -> Self {
        let k = DensityKernel::default();
        ImagingSection {
            sigma: k.sigma,
            kernel: k.size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossSection {
    pub th: f64,
    pub grid: (usize, usize),
    pub lambda: f64,
    pub grl_factor: f64,
    pub disc_norm: DiscNorm,
}

impl Default for LossSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        LossSection {
            th: h.th,
            grid: h.grid,
            lambda: h.lambda,
            grl_factor: h.grl_factor,
            disc_norm: h.disc_norm,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreeSection {
    pub p_s: f64,
    pub p_pt: f64,
    pub theta_max: f64,
}

impl Default for TreeSection {
    fn default() -> Self {
        TreeSection {
            p_s: 0.5,
            p_pt: 0.5,
            theta_max: crate::transform_tree::DEFAULT_THETA_MAX,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimSection {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch: usize,
}

impl Default for OptimSection {
    fn default() -> Self {
        let h = TrainHyper::default();
        OptimSection {
            lr: h.lr,
            schedule: h.schedule,
            beta1: h.beta1,
            beta2: h.beta2,
            adam_eps: h.adam_eps,
            batch: h.batch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSection {
    pub n_d: usize,
    pub rounds: usize,
    pub n_pairs: usize,
    pub controller_steps: usize,
    pub controller_lr: f64,
    pub eta: f64,
    pub ascent_steps: usize,
    pub exploit_fraction: f64,
    pub scale_min: f64,
    pub final_from_scratch: bool,
    /// Save every candidate's weights under `ckpt/round_<r>/cand_<k>.bin`.
    pub save_candidates: bool,
}

impl Default for SearchSection {
    fn default() -> Self {
        let s = SearchConfig::default();
        SearchSection {
            n_d: s.n_d,
            rounds: s.rounds,
            n_pairs: s.n_pairs,
            controller_steps: s.controller_steps,
            controller_lr: s.controller_lr,
            eta: s.update.eta,
            ascent_steps: s.update.ascent_steps,
            exploit_fraction: s.update.exploit_fraction,
            scale_min: s.scale_min,
            final_from_scratch: s.final_from_scratch,
            save_candidates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BudgetSection {
    pub pretrain: usize,
    pub candidate: usize,
    #[serde(rename = "final")]
    pub final_steps: usize,
}

impl BudgetSection {
    fn to_search(&self, s: &mut SearchConfig) {
        s.pretrain_steps = self.pretrain;
        s.candidate_steps = self.candidate;
        s.final_steps = self.final_steps;
    }
}

impl Default for BudgetSection {
    fn default() -> Self {
        let s = SearchConfig::default();
        BudgetSection {
            pretrain: s.pretrain_steps,
            candidate: s.candidate_steps,
            final_steps: s.final_steps,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n_source: usize,
    pub n_target: usize,
    pub height: usize,
    pub width: usize,
    pub mean_count: f64,
    pub head_radius: f64,
    pub shift: DomainShift,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = SceneConfig::default();
        DataSection {
            n_source: 200,
            n_target: 200,
            height: s.height,
            width: s.width,
            mean_count: s.mean_count,
            head_radius: s.head_radius,
            shift: DomainShift::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedSection {
    /// Root of every named substream.
    pub root: u64,
}

/// Subdirectories of the run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathSection {
    pub data: String,
    pub search: String,
    pub train: String,
    pub eval: String,
    pub report: String,
}

impl Default for PathSection {
    fn default() -> Self {
        PathSection {
            data: "data".into(),
            search: "search".into(),
            train: "train".into(),
            eval: "eval".into(),
            report: "report".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub imaging: ImagingSection,
    pub loss: LossSection,
    pub tree: TreeSection,
    pub optim: OptimSection,
    pub model: ModelConfigDef,
    pub search: SearchSection,
    pub budgets: BudgetSection,
    pub data: DataSection,
    pub seeds: SeedSection,
    pub paths: PathSection,
}

impl RunConfig {
    /// Parses and validates; errors name the offending key path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| Error::Config(e.to_string());
        self.kernel().validate().map_err(wrap)?;
        self.scene().validate().map_err(wrap)?;
        self.search_config().validate().map_err(wrap)?;
        if self.data.n_source == 0 || self.data.n_target == 0 {
            return Err(Error::Config("data.n_source and data.n_target must be >= 1".into()));
        }
        for (k, v) in [
            ("paths.data", &self.paths.data),
            ("paths.search", &self.paths.search),
            ("paths.train", &self.paths.train),
            ("paths.eval", &self.paths.eval),
            ("paths.report", &self.paths.report),
        ] {
            let p = std::path::Path::new(v);
            if v.is_empty() || p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                return Err(Error::Config(format!("{k} must be a relative path inside the run dir")));
            }
        }
        Ok(())
    }

    pub fn kernel(&self) -> DensityKernel {
        DensityKernel {
            sigma: self.imaging.sigma,
            size: self.imaging.kernel,
        }
    }

    pub fn hyper(&self) -> TrainHyper {
        TrainHyper {
            lr: self.optim.lr,
            schedule: self.optim.schedule,
            beta1: self.optim.beta1,
            beta2: self.optim.beta2,
            adam_eps: self.optim.adam_eps,
            lambda: self.loss.lambda,
            grl_factor: self.loss.grl_factor,
            grid: self.loss.grid,
            th: self.loss.th,
            batch: self.optim.batch,
            disc_norm: self.loss.disc_norm,
        }
    }

    pub fn data_seed(&self) -> u64 {
        rng::derive(self.seeds.root, "data", 0)
    }

    pub fn search_seed(&self) -> u64 {
        rng::derive(self.seeds.root, "search", 0)
    }

    pub fn scene(&self) -> SceneConfig {
        SceneConfig {
            height: self.data.height,
            width: self.data.width,
            mean_count: self.data.mean_count,
            head_radius: self.data.head_radius,
            seed: self.data_seed(),
        }
    }

    pub fn splits(&self) -> (f64, f64) {
        (self.tree.p_s, self.tree.p_pt)
    }

    pub fn search_config(&self) -> SearchConfig {
        let s = &self.search;
        let mut out = SearchConfig {
            n_d: s.n_d,
            rounds: s.rounds,
            n_pairs: s.n_pairs,
            controller_steps: s.controller_steps,
            controller_lr: s.controller_lr,
            update: UpdateConfig {
                eta: s.eta,
                ascent_steps: s.ascent_steps,
                exploit_fraction: s.exploit_fraction,
            },
            theta_max: self.tree.theta_max,
            scale_min: s.scale_min,
            splits: self.splits(),
            final_from_scratch: s.final_from_scratch,
            seed: self.search_seed(),
            model: self.model,
            hyper: self.hyper(),
            kernel: self.kernel(),
            ..SearchConfig::default()
        };
        self.budgets.to_search(&mut out);
        out
    }
}
