//! Encoder/predictor/decoder surrogate over normalized transform vectors and
//! gradient ascent on predicted reward in its hidden space.
//!
//! Vectors are laid out as `[C, 1, N]` tensors so one graph evaluates a whole
//! pool through 1x1 convolutions.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::transform_tree::TransformSpec;

pub const HIDDEN: usize = 16;
/// Duplicate tolerance per normalized coordinate.
pub const DUPLICATE_TOL: f64 = 0.01;
const MAX_HALVINGS: usize = 5;

/// Maps specs to `[0, 1]^3` and back: `(p_g, scale, angle / theta_max)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub theta_max: f64,
    /// Smallest scale emitted when denormalizing.
    pub scale_min: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Normalizer {
            theta_max: crate::transform_tree::DEFAULT_THETA_MAX,
            scale_min: 0.1,
        }
    }
}

impl Normalizer {
    pub fn to_vec(&self, s: &TransformSpec) -> [f64; 3] {
        [s.p_g, s.scale, s.angle_deg / self.theta_max]
    }

    /// Clamps into the valid ranges, then denormalizes.
    pub fn from_vec(&self, d: [f64; 3], splits: (f64, f64)) -> TransformSpec {
        let c = |v: f64, lo: f64| if v.is_nan() { lo } else { v.clamp(lo, 1.0) };
        TransformSpec::new(c(d[0], 0.0), c(d[1], self.scale_min), c(d[2], 0.0) * self.theta_max)
            .with_splits(splits.0, splits.1)
    }

    pub fn random_spec(&self, r: &mut Rng, splits: (f64, f64)) -> TransformSpec {
        let d = [
            r.random_range(0.0..=1.0),
            r.random_range(self.scale_min..=1.0),
            r.random_range(0.0..=1.0),
        ];
        self.from_vec(d, splits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub spec: TransformSpec,
    pub d: [f64; 3],
    pub reward: f64,
    /// Min-max normalized reward over the pool it was trained with.
    pub norm_reward: f64,
    pub round: usize,
}

/// Rescales rewards of `pool` into `[0, 1]`; a constant pool maps to 0.5.
pub fn normalize_rewards(pool: &mut [CandidateRecord]) {
    let lo = pool.iter().map(|c| c.reward).fold(f64::INFINITY, f64::min);
    let hi = pool.iter().map(|c| c.reward).fold(f64::NEG_INFINITY, f64::max);
    for c in pool.iter_mut() {
        c.norm_reward = if hi > lo { (c.reward - lo) / (hi - lo) } else { 0.5 };
    }
}

const ENC_W: usize = 0;
const ENC_B: usize = 1;
const PRED_W: usize = 2;
const PRED_B: usize = 3;
const DEC_W: usize = 4;
const DEC_B: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerParams {
    tensors: Vec<Tensor>,
}

fn shapes() -> [Vec<usize>; 6] {
    [
        vec![HIDDEN, 3, 1, 1],
        vec![HIDDEN],
        vec![1, HIDDEN, 1, 1],
        vec![1],
        vec![3, HIDDEN, 1, 1],
        vec![3],
    ]
}

impl ControllerParams {
    /// Seeded uniform Glorot initialization, zero biases.
    pub fn init(seed: u64) -> Self {
        let tensors = shapes()
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                let n: usize = s.iter().product();
                let data = if s.len() == 1 {
                    vec![0.0; n]
                } else {
                    let bound = (6.0 / (s[0] + s[1]) as f64).sqrt();
                    let mut r = rng::stream(seed, "controller-init", i as u64);
                    (0..n).map(|_| r.random_range(-bound..bound)).collect()
                };
                Tensor::new(s, data).expect("shape")
            })
            .collect();
        ControllerParams { tensors }
    }

    pub fn zeros() -> Self {
        ControllerParams {
            tensors: shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data().iter().all(|v| v.is_finite()))
    }
}

fn bind(g: &mut Graph, c: &ControllerParams, trainable: bool) -> Vec<Var> {
    c.tensors
        .iter()
        .map(|t| if trainable { g.param(t.clone()) } else { g.constant(t.clone()) })
        .collect()
}

/// `[rows]` values as a `[rows, 1, n]` tensor with columns `cols`.
fn columns(rows: usize, cols: &[Vec<f64>]) -> Tensor {
    let n = cols.len();
    let mut data = vec![0.0; rows * n];
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            data[i * n + j] = *v;
        }
    }
    Tensor::new(vec![rows, 1, n], data).expect("layout")
}

fn check_unit(d: &[f64; 3]) -> Result<()> {
    if d.iter().all(|v| (0.0..=1.0).contains(v)) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("transform vector {d:?} is outside [0, 1]^3")))
    }
}

fn encode_var(g: &mut Graph, v: &[Var], x: Var) -> Result<Var> {
    let z = g.conv2d(x, v[ENC_W], v[ENC_B])?;
    Ok(g.tanh(z))
}

fn predict_var(g: &mut Graph, v: &[Var], h: Var) -> Result<Var> {
    let z = g.conv2d(h, v[PRED_W], v[PRED_B])?;
    Ok(g.sigmoid(z))
}

fn decode_var(g: &mut Graph, v: &[Var], h: Var) -> Result<Var> {
    let z = g.conv2d(h, v[DEC_W], v[DEC_B])?;
    Ok(g.sigmoid(z))
}

pub fn encode(c: &ControllerParams, d: &[f64; 3]) -> Result<Vec<f64>> {
    check_unit(d)?;
    let mut g = Graph::new();
    let v = bind(&mut g, c, false);
    let x = g.constant(columns(3, &[d.to_vec()]));
    let h = encode_var(&mut g, &v, x)?;
    Ok(g.value(h).data().to_vec())
}

fn hidden_var(g: &mut Graph, h: &[f64]) -> Result<Var> {
    if h.len() != HIDDEN {
        return Err(Error::shape(HIDDEN, h.len()));
    }
    Ok(g.constant(columns(HIDDEN, &[h.to_vec()])))
}

pub fn predict(c: &ControllerParams, h: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let v = bind(&mut g, c, false);
    let hv = hidden_var(&mut g, h)?;
    let p = predict_var(&mut g, &v, hv)?;
    Ok(g.value(p).item())
}

pub fn decode(c: &ControllerParams, h: &[f64]) -> Result<[f64; 3]> {
    let mut g = Graph::new();
    let v = bind(&mut g, c, false);
    let hv = hidden_var(&mut g, h)?;
    let d = decode_var(&mut g, &v, hv)?;
    let o = g.value(d).data();
    Ok([o[0], o[1], o[2]])
}

/// `|d - d~|^2 + (p - p~)^2` for one candidate.
pub fn controller_loss(d: &[f64; 3], dt: &[f64; 3], p: f64, pt: f64) -> f64 {
    d.iter().zip(dt).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() + (p - pt) * (p - pt)
}

/// Pool loss as a graph over the bound controller weights.
fn pool_loss(g: &mut Graph, v: &[Var], pool: &[CandidateRecord]) -> Result<Var> {
    let ds: Vec<Vec<f64>> = pool.iter().map(|c| c.d.to_vec()).collect();
    let x = g.constant(columns(3, &ds));
    let h = encode_var(g, v, x)?;
    let p = predict_var(g, v, h)?;
    let dt = decode_var(g, v, h)?;
    let target_d = columns(3, &ds).into_data();
    let target_p: Vec<f64> = pool.iter().map(|c| c.norm_reward).collect();
    let ld = g.sq_err(dt, &target_d)?;
    let lp = g.sq_err(p, &target_p)?;
    g.add(ld, lp)
}

/// Summed loss of `c` over `pool`.
pub fn pool_loss_value(c: &ControllerParams, pool: &[CandidateRecord]) -> Result<f64> {
    let mut g = Graph::new();
    let v = bind(&mut g, c, false);
    let l = pool_loss(&mut g, &v, pool)?;
    Ok(g.value(l).item())
}

/// Analytic gradient of the pool loss, one vector per weight tensor.
pub fn pool_loss_grad(c: &ControllerParams, pool: &[CandidateRecord]) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let v = bind(&mut g, c, true);
    let l = pool_loss(&mut g, &v, pool)?;
    let grads = g.backward(l);
    Ok(v.iter()
        .zip(&c.tensors)
        .map(|(var, t)| grads.get_or_zeros(*var, t.shape()))
        .collect())
}

/// Full-batch Adam on the pool loss; returns the trained copy and the loss
/// before each step.
pub fn train_controller(
    c: &ControllerParams,
    pool: &[CandidateRecord],
    steps: usize,
    lr: f64,
) -> Result<(ControllerParams, Vec<f64>)> {
    if pool.len() < 4 {
        return Err(Error::InvalidArgument(format!("controller pool has {} < 4 candidates", pool.len())));
    }
    for rec in pool {
        check_unit(&rec.d)?;
    }
    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
    let mut out = c.clone();
    let mut m: Vec<Vec<f64>> = c.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut s = m.clone();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut g = Graph::new();
        let v = bind(&mut g, &out, true);
        let l = pool_loss(&mut g, &v, pool)?;
        let loss = g.value(l).item();
        if !loss.is_finite() {
            return Err(Error::NonFinite { step, detail: "controller loss".into() });
        }
        losses.push(loss);
        let grads = g.backward(l);
        let t = (step + 1) as i32;
        let (c1, c2) = (1.0 - f64::powi(b1, t), 1.0 - f64::powi(b2, t));
        for (i, var) in v.iter().enumerate() {
            let gr = grads.get_or_zeros(*var, out.tensors[i].shape());
            for (j, w) in out.tensors[i].data_mut().iter_mut().enumerate() {
                let gj = gr.data()[j];
                m[i][j] = b1 * m[i][j] + (1.0 - b1) * gj;
                s[i][j] = b2 * s[i][j] + (1.0 - b2) * gj * gj;
                *w -= lr * (m[i][j] / c1) / ((s[i][j] / c2).sqrt() + eps);
            }
        }
    }
    Ok((out, losses))
}

/// `p~` at `h` and its gradient with respect to `h`.
pub fn predict_with_grad(c: &ControllerParams, h: &[f64]) -> Result<(f64, Vec<f64>)> {
    if h.len() != HIDDEN {
        return Err(Error::shape(HIDDEN, h.len()));
    }
    let mut g = Graph::new();
    let v = bind(&mut g, c, false);
    let hv = g.param(columns(HIDDEN, &[h.to_vec()]));
    let p = predict_var(&mut g, &v, hv)?;
    let grads = g.backward(p);
    Ok((g.value(p).item(), grads.get_or_zeros(hv, &[HIDDEN, 1, 1]).into_data()))
}

/// Moves `h` up the predicted reward for `steps` steps of size `eta`,
/// halving the step whenever the prediction would drop.
pub fn ascend(c: &ControllerParams, h: &[f64], eta: f64, steps: usize) -> Result<Vec<f64>> {
    let mut h = h.to_vec();
    for _ in 0..steps {
        let (p0, grad) = predict_with_grad(c, &h)?;
        let mut step = eta;
        let mut moved = false;
        for _ in 0..=MAX_HALVINGS {
            let cand: Vec<f64> = h.iter().zip(&grad).map(|(x, g)| x + step * g).collect();
            if predict(c, &cand)? >= p0 {
                h = cand;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    Ok(h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UpdateConfig {
    pub eta: f64,
    pub ascent_steps: usize,
    /// Share of the next pool produced by ascent from the best candidates.
    pub exploit_fraction: f64,
}

impl Default for UpdateConfig {
    fn default() -> Self {
        UpdateConfig {
            eta: 0.5,
            ascent_steps: 3,
            exploit_fraction: 0.5,
        }
    }
}

/// Encodes `d`, ascends the predicted reward, decodes and denormalizes.
pub fn propose(
    c: &ControllerParams,
    d: &[f64; 3],
    cfg: &UpdateConfig,
    norm: &Normalizer,
    splits: (f64, f64),
) -> Result<TransformSpec> {
    let h = ascend(c, &encode(c, d)?, cfg.eta, cfg.ascent_steps)?;
    Ok(norm.from_vec(decode(c, &h)?, splits))
}

fn is_duplicate(d: &[f64; 3], seen: &[[f64; 3]]) -> bool {
    seen.iter().any(|s| s.iter().zip(d).all(|(a, b)| (a - b).abs() <= DUPLICATE_TOL))
}

/// Next pool of `n_out` specs: ascended reconstructions of the best
/// candidates of `pool`, then seeded random specs. Any emitted spec within
/// [`DUPLICATE_TOL`] of a pooled or already emitted one is replaced by a
/// random spec.
pub fn update_candidates(
    c: &ControllerParams,
    pool: &[CandidateRecord],
    n_out: usize,
    cfg: &UpdateConfig,
    norm: &Normalizer,
    splits: (f64, f64),
    seed: u64,
) -> Result<Vec<TransformSpec>> {
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|a, b| pool[*b].reward.total_cmp(&pool[*a].reward).then(a.cmp(b)));
    let n_exploit = ((n_out as f64 * cfg.exploit_fraction).round() as usize).min(pool.len()).min(n_out);
    let mut r = rng::stream(seed, "candidates", 0);
    let mut seen: Vec<[f64; 3]> = pool.iter().map(|p| p.d).collect();
    let mut out = Vec::with_capacity(n_out);
    let push_random = |r: &mut Rng, seen: &mut Vec<[f64; 3]>, out: &mut Vec<TransformSpec>| loop {
        let s = norm.random_spec(r, splits);
        let d = norm.to_vec(&s);
        if !is_duplicate(&d, seen) {
            seen.push(d);
            out.push(s);
            return;
        }
    };
    for &k in order.iter().take(n_exploit) {
        let spec = propose(c, &pool[k].d, cfg, norm, splits)?;
        let d = norm.to_vec(&spec);
        if is_duplicate(&d, &seen) {
            push_random(&mut r, &mut seen, &mut out);
        } else {
            seen.push(d);
            out.push(spec);
        }
    }
    while out.len() < n_out {
        push_random(&mut r, &mut seen, &mut out);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(d: [f64; 3], reward: f64) -> CandidateRecord {
        let norm = Normalizer::default();
        CandidateRecord {
            spec: norm.from_vec(d, (0.5, 0.5)),
            d,
            reward,
            norm_reward: 0.0,
            round: 0,
        }
    }

    fn random_pool(n: usize, seed: u64, reward: impl Fn(&[f64; 3]) -> f64) -> Vec<CandidateRecord> {
        let mut r = rng::stream(seed, "pool", 0);
        let mut pool: Vec<CandidateRecord> = (0..n)
            .map(|_| {
                let d = [r.random::<f64>(), r.random_range(0.1..1.0), r.random::<f64>()];
                record(d, reward(&d))
            })
            .collect();
        normalize_rewards(&mut pool);
        pool
    }

    #[test]
    fn zero_weights() {
        let c = ControllerParams::zeros();
        let h = encode(&c, &[0.2, 0.5, 0.9]).unwrap();
        assert!(h.iter().all(|v| *v == 0.0));
        assert_eq!(predict(&c, &h).unwrap(), 0.5);
        assert_eq!(decode(&c, &h).unwrap(), [0.5; 3]);
        assert!(encode(&c, &[1.2, 0.5, 0.0]).is_err());
        assert!(encode(&c, &[-0.1, 0.5, 0.0]).is_err());
    }

    #[test]
    fn encoder_matches_loop_and_ranges() {
        let c = ControllerParams::init(3);
        let d = [0.3, 0.7, 0.1];
        let h = encode(&c, &d).unwrap();
        let (w, b) = (c.tensors()[ENC_W].data(), c.tensors()[ENC_B].data());
        for (i, hv) in h.iter().enumerate() {
            let mut z = b[i];
            for j in 0..3 {
                z += w[i * 3 + j] * d[j];
            }
            assert!((hv - z.tanh()).abs() < 1e-9);
            assert!(hv.abs() < 1.0);
        }
        let p = predict(&c, &h).unwrap();
        assert!(p > 0.0 && p < 1.0);
        assert!(decode(&c, &h).unwrap().iter().all(|v| *v > 0.0 && *v < 1.0));
    }

    #[test]
    fn loss_examples() {
        let d = [0.1, 0.2, 0.3];
        assert_eq!(controller_loss(&d, &d, 0.4, 0.4), 0.0);
        assert!((controller_loss(&d, &d, 0.4, 0.5) - 0.01).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn loss_matches_loop(d in proptest::array::uniform3(0.0f64..1.0), dt in proptest::array::uniform3(0.0f64..1.0), p in 0.0f64..1.0, pt in 0.0f64..1.0) {
            let mut s = 0.0;
            for i in 0..3 {
                s += (d[i] - dt[i]) * (d[i] - dt[i]);
            }
            s += (p - pt) * (p - pt);
            prop_assert!((controller_loss(&d, &dt, p, pt) - s).abs() < 1e-12);
        }

        #[test]
        fn normalization_round_trip(p_g in 0.0f64..=1.0, scale in 0.1f64..=1.0, angle in 0.0f64..=30.0) {
            let n = Normalizer::default();
            let s = TransformSpec::new(p_g, scale, angle);
            let back = n.from_vec(n.to_vec(&s), (0.5, 0.5));
            prop_assert!((back.p_g - p_g).abs() < 1e-12);
            prop_assert!((back.scale - scale).abs() < 1e-12);
            prop_assert!((back.angle_deg - angle).abs() < 1e-12);
        }
    }

    #[test]
    fn pool_gradient_matches_finite_differences() {
        let c = ControllerParams::init(5);
        let pool = random_pool(6, 1, |d| d[0] - d[2]);
        let analytic = pool_loss_grad(&c, &pool).unwrap();
        let eps = 1e-6;
        let mut worst = 0.0f64;
        let mut q = c.clone();
        for i in 0..c.tensors().len() {
            for j in 0..c.tensors()[i].len() {
                let orig = c.tensors()[i].data()[j];
                q.tensors_mut()[i].data_mut()[j] = orig + eps;
                let up = pool_loss_value(&q, &pool).unwrap();
                q.tensors_mut()[i].data_mut()[j] = orig - eps;
                let down = pool_loss_value(&q, &pool).unwrap();
                q.tensors_mut()[i].data_mut()[j] = orig;
                let n = (up - down) / (2.0 * eps);
                let a = analytic[i].data()[j];
                worst = worst.max((a - n).abs() / a.abs().max(n.abs()).max(1e-4));
            }
        }
        assert!(worst < 1e-5, "{worst}");
    }

    #[test]
    fn pool_loss_is_the_sum_of_candidate_losses() {
        let c = ControllerParams::init(6);
        let pool = random_pool(5, 2, |d| d[1]);
        let mut s = 0.0;
        for rec in &pool {
            let h = encode(&c, &rec.d).unwrap();
            s += controller_loss(&rec.d, &decode(&c, &h).unwrap(), rec.norm_reward, predict(&c, &h).unwrap());
        }
        assert!((pool_loss_value(&c, &pool).unwrap() - s).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let c = ControllerParams::init(7);
        let pool = random_pool(4, 3, |d| d[0]);
        assert_eq!(train_controller(&c, &pool, 10, 0.0).unwrap().0, c);
        assert!(train_controller(&c, &pool[..3], 10, 0.1).is_err());
    }

    #[test]
    fn training_fits_a_small_pool() {
        let c = ControllerParams::init(8);
        let pool = random_pool(8, 4, |d| (d[0] - 0.3).powi(2) + d[2]);
        let (t, losses) = train_controller(&c, &pool, 2000, 0.01).unwrap();
        let fin = pool_loss_value(&t, &pool).unwrap();
        assert!(fin <= 0.02, "final loss {fin}");
        let smooth: Vec<f64> = losses.chunks(50).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
        for w in smooth.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{smooth:?}");
        }
        for rec in &pool {
            let back = decode(&t, &encode(&t, &rec.d).unwrap()).unwrap();
            for k in 0..3 {
                assert!((back[k] - rec.d[k]).abs() <= 0.05, "{back:?} vs {:?}", rec.d);
            }
        }
    }

    #[test]
    fn predictor_learns_a_linear_reward() {
        let c = ControllerParams::init(9);
        let pool = random_pool(16, 5, |d| d[0]);
        let (t, _) = train_controller(&c, &pool, 2000, 0.01).unwrap();
        let probe: Vec<f64> = (0..=10)
            .map(|i| predict(&t, &encode(&t, &[i as f64 / 10.0, 0.5, 0.5]).unwrap()).unwrap())
            .collect();
        for w in probe.windows(2) {
            assert!(w[1] >= w[0], "{probe:?}");
        }
    }

    #[test]
    fn ascent_never_lowers_the_prediction() {
        let c = ControllerParams::init(10);
        let pool = random_pool(8, 6, |d| -(d[0] - 0.8).powi(2));
        let (t, _) = train_controller(&c, &pool, 500, 0.01).unwrap();
        for rec in &pool {
            let h = encode(&t, &rec.d).unwrap();
            let moved = ascend(&t, &h, 0.1, 3).unwrap();
            assert!(predict(&t, &moved).unwrap() >= predict(&t, &h).unwrap());
            assert_eq!(ascend(&t, &h, 0.0, 3).unwrap(), h);
        }
    }

    #[test]
    fn zero_step_proposal_is_the_reconstruction() {
        let c = ControllerParams::init(11);
        let pool = random_pool(8, 7, |d| d[1]);
        let (t, _) = train_controller(&c, &pool, 2000, 0.01).unwrap();
        let cfg = UpdateConfig { eta: 0.0, ..UpdateConfig::default() };
        let norm = Normalizer::default();
        for rec in &pool {
            let s = propose(&t, &rec.d, &cfg, &norm, (0.5, 0.5)).unwrap();
            let back = decode(&t, &encode(&t, &rec.d).unwrap()).unwrap();
            assert_eq!(s, norm.from_vec(back, (0.5, 0.5)));
            for (a, b) in norm.to_vec(&s).iter().zip(rec.d) {
                assert!((a - b).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn updates_are_valid_and_unique() {
        let c = ControllerParams::init(12);
        let pool = random_pool(8, 8, |d| d[0] + d[1]);
        let (t, _) = train_controller(&c, &pool, 300, 0.01).unwrap();
        let norm = Normalizer::default();
        let specs = update_candidates(&t, &pool, 8, &UpdateConfig::default(), &norm, (0.5, 0.5), 2).unwrap();
        assert_eq!(specs.len(), 8);
        let mut seen: Vec<[f64; 3]> = pool.iter().map(|p| p.d).collect();
        for s in &specs {
            s.validate(norm.theta_max).unwrap();
            let d = norm.to_vec(s);
            assert!(!is_duplicate(&d, &seen));
            seen.push(d);
        }
        let again = update_candidates(&t, &pool, 8, &UpdateConfig::default(), &norm, (0.5, 0.5), 2).unwrap();
        assert_eq!(specs, again);
    }

    #[test]
    fn constant_pool_normalizes_to_half() {
        let mut pool = vec![record([0.1, 0.5, 0.2], -3.0), record([0.4, 0.5, 0.2], -3.0)];
        normalize_rewards(&mut pool);
        assert!(pool.iter().all(|c| c.norm_reward == 0.5));
        pool[1].reward = -1.0;
        normalize_rewards(&mut pool);
        assert_eq!((pool[0].norm_reward, pool[1].norm_reward), (0.0, 1.0));
    }
}
