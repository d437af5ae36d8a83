use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    bind, discriminate_var, estimate_var, extract_var, feature_cell, make_patch_mask, term_scale,
    Bound, DiscLoss, Grid, GridMask, ModelParams, ParamGroup, FEATURE_STRIDE,
};
use crate::autodiff::{Graph, Tensor, Var};
use crate::dataset::{AnnotatedDataset, UnlabeledDataset};
use crate::error::{Error, Result};
use crate::imaging::{sum_pool, DensityMap, Image};
use crate::rng;

/// Normalization of each discrimination term.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DiscNorm {
    /// Divide each term by its number of active cells.
    #[default]
    Mean,
    /// Plain sums over cells.
    Sum,
}

/// Learning-rate schedule over one training budget.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from `lr` at step 0 towards 0 at the end of the budget.
    #[default]
    Cosine,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainHyper {
    pub lr: f64,
    pub schedule: LrSchedule,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub lambda: f64,
    pub grl_factor: f64,
    /// Discriminator cell size in image pixels.
    pub grid: Grid,
    pub th: f64,
    /// Source/target pairs per step.
    pub batch: usize,
    pub disc_norm: DiscNorm,
}

impl Default for TrainHyper {
    fn default() -> Self {
        TrainHyper {
            lr: 1e-3,
            schedule: LrSchedule::Cosine,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            lambda: 1.0,
            grl_factor: 0.01,
            grid: (16, 16),
            th: 0.005,
            batch: 4,
            disc_norm: DiscNorm::Mean,
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be finite and >= 0");
        }
        if !(self.grl_factor > 0.0 && self.grl_factor.is_finite()) {
            return bad("grl_factor must be > 0");
        }
        if !self.th.is_finite() {
            return bad("th must be finite");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        feature_cell(self.grid).map(|_| ())
    }

    /// Learning rate of step `step` out of `budget`.
    pub fn lr_at(&self, step: usize, budget: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = step as f64 / budget.max(1) as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    fn trainable(&self) -> &'static [ParamGroup] {
        if self.lambda > 0.0 {
            &[
                ParamGroup::Extractor,
                ParamGroup::Estimator,
                ParamGroup::Discriminator,
            ]
        } else {
            &[ParamGroup::Extractor, ParamGroup::Estimator]
        }
    }
}

/// One source/target pair entering the objective.
pub struct StepInputs<'a> {
    pub source: &'a Image,
    /// Ground truth at feature resolution.
    pub gt: &'a DensityMap,
    pub source_mask: &'a GridMask,
    pub target: &'a Image,
    /// Fixed target mask; `None` thresholds the live prediction.
    pub target_mask: Option<&'a GridMask>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchLoss {
    pub l_e: f64,
    pub l_d: f64,
    pub total: f64,
    pub disc: DiscLoss,
}

/// Builds the discrimination loss for extracted source/target features,
/// with gradient reversal between the features and the heads.
pub fn adversarial_loss(
    g: &mut Graph,
    b: &Bound,
    feat_s: Var,
    feat_t: Var,
    m_s: &GridMask,
    m_t: &GridMask,
    hyper: &TrainHyper,
) -> Result<(Var, DiscLoss)> {
    let rs = g.reverse_gradient(feat_s, hyper.grl_factor);
    let rt = g.reverse_gradient(feat_t, hyper.grl_factor);
    let (fg_s, bg_s) = discriminate_var(g, b, rs, hyper.grid)?;
    let (fg_t, bg_t) = discriminate_var(g, b, rt, hyper.grid)?;
    let (ws, wt) = (m_s.weights(), m_t.weights());
    let (ws_b, wt_b) = (m_s.inverted_weights(), m_t.inverted_weights());
    let n = hyper.disc_norm;
    let bs = g.neg_log1m_weighted(bg_s, &ws_b, term_scale(&ws_b, n))?;
    let bt = g.neg_log_weighted(bg_t, &wt_b, term_scale(&wt_b, n))?;
    let fs = g.neg_log1m_weighted(fg_s, &ws, term_scale(&ws, n))?;
    let ft = g.neg_log_weighted(fg_t, &wt, term_scale(&wt, n))?;
    let parts = DiscLoss {
        bs: g.value(bs).item(),
        bt: g.value(bt).item(),
        fs: g.value(fs).item(),
        ft: g.value(ft).item(),
    };
    Ok((g.add_all(&[bs, bt, fs, ft])?, parts))
}

/// Full objective `L_E + lambda * L_D` for one pair.
pub fn pair_loss(
    g: &mut Graph,
    b: &Bound,
    inp: &StepInputs<'_>,
    hyper: &TrainHyper,
) -> Result<(Var, BatchLoss)> {
    let fs = extract_var(g, b, inp.source)?;
    let ds = estimate_var(g, b, fs)?;
    let le = g.sq_err(ds, inp.gt.data())?;
    let l_e = g.value(le).item();
    if hyper.lambda == 0.0 {
        return Ok((
            le,
            BatchLoss {
                l_e,
                total: l_e,
                ..BatchLoss::default()
            },
        ));
    }
    let ft = extract_var(g, b, inp.target)?;
    let live;
    let m_t = match inp.target_mask {
        Some(m) => m,
        None => {
            let dt = estimate_var(g, b, ft)?;
            let (_, h, w) = g.value(dt).chw();
            let pred = DensityMap::from_vec(h, w, g.value(dt).data().to_vec())?;
            live = make_patch_mask(&pred, feature_cell(hyper.grid)?, hyper.th)?;
            &live
        }
    };
    let (ld, disc) = adversarial_loss(g, b, fs, ft, inp.source_mask, m_t, hyper)?;
    let weighted = g.scale(ld, hyper.lambda);
    let total = g.add(le, weighted)?;
    Ok((
        total,
        BatchLoss {
            l_e,
            l_d: disc.total(),
            total: g.value(total).item(),
            disc,
        },
    ))
}

/// Adam without weight decay.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, hyper: &TrainHyper) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Adam {
            lr: hyper.lr,
            beta1: hyper.beta1,
            beta2: hyper.beta2,
            eps: hyper.adam_eps,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Updates `params` in place; `grads` entries of `None` leave a tensor untouched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Tensor>]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, t) in params.tensors_mut().iter_mut().enumerate() {
            let Some(gr) = &grads[i] else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in t.data_mut().iter_mut().enumerate() {
                let gj = gr.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mh = m[j] / c1;
                let vh = v[j] / c2;
                *w -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        params.round_to_f32();
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainRecord {
    pub step: usize,
    pub l_e: f64,
    pub l_d: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,L_E,L_D,L\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{}\n", r.step, r.l_e, r.l_d, r.total));
        }
        s
    }

    /// Mean of `f` over records `[from, to)`.
    pub fn mean(&self, from: usize, to: usize, f: impl Fn(&TrainRecord) -> f64) -> f64 {
        let r = &self.records[from..to.min(self.records.len())];
        r.iter().map(f).sum::<f64>() / r.len().max(1) as f64
    }
}

struct Prepared {
    gt: DensityMap,
    mask: GridMask,
}

fn prepare(source: &AnnotatedDataset, hyper: &TrainHyper) -> Result<Vec<Prepared>> {
    source
        .samples
        .iter()
        .map(|s| {
            Ok(Prepared {
                gt: sum_pool(&s.density, FEATURE_STRIDE)?,
                mask: make_patch_mask(&s.density, hyper.grid, hyper.th)?,
            })
        })
        .collect()
}

fn pair_grads(
    p: &ModelParams,
    inp: &StepInputs<'_>,
    hyper: &TrainHyper,
) -> Result<(Vec<Option<Tensor>>, BatchLoss)> {
    let mut g = Graph::new();
    let b = bind(&mut g, p, hyper.trainable());
    let (loss, parts) = pair_loss(&mut g, &b, inp, hyper)?;
    let grads = g.backward(loss);
    let out = b
        .vars()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if hyper.trainable().contains(&ParamGroup::of(i)) {
                Some(grads.get_or_zeros(*v, p.tensors()[i].shape()))
            } else {
                None
            }
        })
        .collect();
    Ok((out, parts))
}

/// Runs `budget` optimizer steps from `p0` and returns the trained copy
/// together with one log row per step.
pub fn train(
    p0: &ModelParams,
    source: &AnnotatedDataset,
    target: &UnlabeledDataset,
    budget: usize,
    hyper: &TrainHyper,
    seed: u64,
) -> Result<(ModelParams, TrainLog)> {
    hyper.validate()?;
    if budget == 0 {
        return Err(Error::InvalidArgument("budget must be >= 1".into()));
    }
    let size = source.image_size()?;
    if hyper.lambda > 0.0 && target.image_size()? != size {
        return Err(Error::shape(size, target.image_size()?));
    }
    let prepared = prepare(source, hyper)?;
    let mut params = p0.clone();
    let mut adam = Adam::new(&params, hyper);
    let mut r = rng::stream(seed, "batches", 0);
    let mut log = TrainLog::default();
    for step in 0..budget {
        let picks: Vec<(usize, usize)> = (0..hyper.batch)
            .map(|_| {
                let s = r.random_range(0..source.len());
                let t = if target.is_empty() {
                    0
                } else {
                    r.random_range(0..target.len())
                };
                (s, t)
            })
            .collect();
        let results: Vec<_> = picks
            .par_iter()
            .map(|&(si, ti)| {
                let inp = StepInputs {
                    source: &source.samples[si].image,
                    gt: &prepared[si].gt,
                    source_mask: &prepared[si].mask,
                    target: target.images.get(ti).unwrap_or(&source.samples[si].image),
                    target_mask: None,
                };
                pair_grads(&params, &inp, hyper)
            })
            .collect();
        let scale = 1.0 / hyper.batch as f64;
        let mut acc: Vec<Option<Tensor>> = vec![None; params.tensors().len()];
        let mut rec = TrainRecord {
            step,
            l_e: 0.0,
            l_d: 0.0,
            total: 0.0,
        };
        for res in results {
            let (grads, parts) = res?;
            rec.l_e += parts.l_e * scale;
            rec.l_d += parts.l_d * scale;
            rec.total += parts.total * scale;
            for (a, gr) in acc.iter_mut().zip(grads) {
                if let Some(gr) = gr {
                    match a {
                        Some(a) => a.add_assign(&gr),
                        None => *a = Some(gr),
                    }
                }
            }
        }
        if !rec.total.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("L_E={} L_D={}", rec.l_e, rec.l_d),
            });
        }
        for t in acc.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= scale;
            }
        }
        adam.set_lr(hyper.lr_at(step, budget));
        adam.step(&mut params, &acc);
        if !params.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "parameters became non-finite".into(),
            });
        }
        log.records.push(rec);
    }
    Ok((params, log))
}

/// Largest relative deviation between analytic gradients of the scalar built
/// by `loss` and central finite differences, over every parameter scalar.
pub fn grad_check(
    p: &ModelParams,
    eps: f64,
    loss: impl Fn(&mut Graph, &Bound) -> Result<Var>,
) -> Result<f64> {
    let all = [
        ParamGroup::Extractor,
        ParamGroup::Estimator,
        ParamGroup::Discriminator,
    ];
    let mut g = Graph::new();
    let b = bind(&mut g, p, &all);
    let l = loss(&mut g, &b)?;
    let grads = g.backward(l);
    let eval = |q: &ModelParams| -> Result<f64> {
        let mut g = Graph::new();
        let b = bind(&mut g, q, &[]);
        let l = loss(&mut g, &b)?;
        Ok(g.value(l).item())
    };
    let mut worst = 0.0f64;
    let mut q = p.clone();
    for i in 0..p.tensors().len() {
        let analytic = grads.get_or_zeros(b.var(i), p.tensors()[i].shape());
        for j in 0..p.tensors()[i].len() {
            let orig = p.tensors()[i].data()[j];
            q.tensors_mut()[i].data_mut()[j] = orig + eps;
            let up = eval(&q)?;
            q.tensors_mut()[i].data_mut()[j] = orig - eps;
            let down = eval(&q)?;
            q.tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
