//! Recurrent policy over architecture action sequences.
//!
//! A single GRU cell is unrolled for `5 * n` steps. Step `t` reads the
//! embedding of the previous action (a learned start vector at the first
//! step) and emits a categorical distribution through the head belonging to
//! that step's decision kind. Heads and embeddings are shared across block
//! positions.
//!
//! Training is Monte Carlo policy gradient with a moving-average baseline:
//!
//! ```text
//! grad J = 1/m sum_k sum_t gamma^(T-t) * grad log pi(a_t | a_<t) * (R_k - b)
//! ```
//!
//! applied as plain gradient ascent. Backpropagation through time is written
//! out by hand.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::search_space::{
    decode, ArchitectureSpec, SearchSpaceConfig, DECISIONS_PER_BLOCK, SKIP_INDEX,
};

const INIT_RANGE: f64 = 0.08;
const MAX_RESAMPLES: usize = 100;
const CHECKPOINT_VERSION: u32 = 1;

fn default_learning_rate() -> f64 {
    5e-3
}
fn default_discount() -> f64 {
    0.99
}
fn default_baseline_decay() -> f64 {
    0.95
}
fn default_batch_size() -> usize {
    5
}
fn default_hidden_dim() -> usize {
    64
}
fn default_embedding_dim() -> usize {
    32
}
fn default_temperature() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    /// Per-step discount of the policy gradient.
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_baseline_decay")]
    pub baseline_decay: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_hidden_dim")]
    pub hidden_dim: usize,
    #[serde(default = "default_embedding_dim")]
    pub embedding_dim: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            learning_rate: default_learning_rate(),
            discount: default_discount(),
            baseline_decay: default_baseline_decay(),
            batch_size: default_batch_size(),
            hidden_dim: default_hidden_dim(),
            embedding_dim: default_embedding_dim(),
            temperature: default_temperature(),
        }
    }
}

impl Hyper {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 || self.embedding_dim == 0 {
            return bad("hidden_dim and embedding_dim must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.baseline_decay) && self.baseline_decay != 1.0 {
            return bad("baseline_decay must lie in [0, 1]");
        }
        if !(self.temperature > 0.0) || !self.learning_rate.is_finite() || self.learning_rate < 0.0
        {
            return bad("temperature must be positive and learning_rate non-negative");
        }
        Ok(())
    }
}

/// Offsets of every parameter tensor inside the flat parameter vector.
/// Matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub hidden: usize,
    pub embed: usize,
    pub arities: [usize; DECISIONS_PER_BLOCK],
    pub start: Range<usize>,
    pub embeddings: [Range<usize>; DECISIONS_PER_BLOCK],
    pub w_z: Range<usize>,
    pub w_r: Range<usize>,
    pub w_n: Range<usize>,
    pub u_z: Range<usize>,
    pub u_r: Range<usize>,
    pub u_n: Range<usize>,
    pub b_z: Range<usize>,
    pub b_r: Range<usize>,
    pub b_n: Range<usize>,
    pub head_w: [Range<usize>; DECISIONS_PER_BLOCK],
    pub head_b: [Range<usize>; DECISIONS_PER_BLOCK],
    pub len: usize,
}

impl Layout {
    pub fn new(arities: [usize; DECISIONS_PER_BLOCK], hidden: usize, embed: usize) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let r = next..next + n;
            next += n;
            r
        };
        let start = take(embed);
        let embeddings = arities.map(|a| take(a * embed));
        let (w_z, w_r, w_n) = (
            take(hidden * embed),
            take(hidden * embed),
            take(hidden * embed),
        );
        let (u_z, u_r, u_n) = (
            take(hidden * hidden),
            take(hidden * hidden),
            take(hidden * hidden),
        );
        let (b_z, b_r, b_n) = (take(hidden), take(hidden), take(hidden));
        let head_w = arities.map(|a| take(a * hidden));
        let head_b = arities.map(&mut take);
        Layout {
            hidden,
            embed,
            arities,
            start,
            embeddings,
            w_z,
            w_r,
            w_n,
            u_z,
            u_r,
            u_n,
            b_z,
            b_r,
            b_n,
            head_w,
            head_b,
            len: next,
        }
    }

    /// Named tensors, for reporting.
    pub fn tensors(&self) -> Vec<(String, Range<usize>)> {
        let mut out = vec![("start".to_string(), self.start.clone())];
        for (k, r) in self.embeddings.iter().enumerate() {
            out.push((format!("embed.{k}"), r.clone()));
        }
        for (name, r) in [
            ("gru.w_z", &self.w_z),
            ("gru.w_r", &self.w_r),
            ("gru.w_n", &self.w_n),
            ("gru.u_z", &self.u_z),
            ("gru.u_r", &self.u_r),
            ("gru.u_n", &self.u_n),
            ("gru.b_z", &self.b_z),
            ("gru.b_r", &self.b_r),
            ("gru.b_n", &self.b_n),
        ] {
            out.push((name.to_string(), r.clone()));
        }
        for k in 0..DECISIONS_PER_BLOCK {
            out.push((format!("head.{k}.w"), self.head_w[k].clone()));
            out.push((format!("head.{k}.b"), self.head_b[k].clone()));
        }
        out
    }

    fn input_row(&self, prev: Option<(usize, usize)>) -> Range<usize> {
        match prev {
            None => self.start.clone(),
            Some((kind, action)) => {
                let base = self.embeddings[kind].start + action * self.embed;
                base..base + self.embed
            }
        }
    }
}

fn matvec_add(out: &mut [f64], w: &[f64], x: &[f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn matvec_t_add(out: &mut [f64], w: &[f64], y: &[f64]) {
    let cols = out.len();
    for (yi, row) in y.iter().zip(w.chunks_exact(cols)) {
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * yi;
        }
    }
}

fn outer_add(g: &mut [f64], y: &[f64], x: &[f64]) {
    let cols = x.len();
    for (yi, row) in y.iter().zip(g.chunks_exact_mut(cols)) {
        for (gij, xj) in row.iter_mut().zip(x) {
            *gij += yi * xj;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = logits.iter().map(|z| z / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    scaled.iter().map(|z| z - lse).collect()
}

/// Cached activations of one unrolled step.
struct Step {
    prev: Option<(usize, usize)>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    h: Vec<f64>,
    /// Log-probabilities of the head, `None` on forced steps.
    log_probs: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub actions: Vec<usize>,
    /// Log-probability of each action; forced steps record 0.
    pub step_logprobs: Vec<f64>,
    pub reward: f64,
    pub feasible: bool,
}

impl EpisodeRecord {
    pub fn total_logprob(&self) -> f64 {
        self.step_logprobs.iter().sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControllerState {
    pub hyper: Hyper,
    pub allow_skip: bool,
    pub num_blocks: usize,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub baseline: f64,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    hyper: Hyper,
    allow_skip: bool,
    num_blocks: usize,
    arities: [usize; DECISIONS_PER_BLOCK],
    params: Vec<f64>,
    baseline: f64,
}

impl ControllerState {
    pub fn init(cfg: &SearchSpaceConfig, hyper: Hyper, seed: u64) -> Result<Self> {
        cfg.check()?;
        hyper.check()?;
        let layout = Layout::new(cfg.arities(), hyper.hidden_dim, hyper.embedding_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = (0..layout.len)
            .map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE))
            .collect();
        Ok(ControllerState {
            hyper,
            allow_skip: cfg.allow_skip,
            num_blocks: cfg.num_searchable_blocks,
            layout,
            params,
            baseline: 0.0,
        })
    }

    pub fn steps(&self) -> usize {
        DECISIONS_PER_BLOCK * self.num_blocks
    }

    fn check_space(&self, cfg: &SearchSpaceConfig) -> Result<()> {
        if cfg.arities() != self.layout.arities
            || cfg.allow_skip != self.allow_skip
            || cfg.num_searchable_blocks != self.num_blocks
        {
            return Err(Error::InvalidConfig(
                "controller was built for a different search space".into(),
            ));
        }
        Ok(())
    }

    /// Steps after a skip decision are pinned to the placeholder index.
    /// Only reads the block's first action, which precedes `t`.
    fn forced(&self, actions: &[usize], t: usize) -> bool {
        let block_start = t - t % DECISIONS_PER_BLOCK;
        self.allow_skip && t != block_start && actions[block_start] == SKIP_INDEX
    }

    fn cell(&self, prev: Option<(usize, usize)>, h_prev: &[f64]) -> Step {
        let l = &self.layout;
        let p = &self.params;
        let x = &p[l.input_row(prev)];
        let gate = |w: &Range<usize>, u: &Range<usize>, b: &Range<usize>, hin: &[f64]| {
            let mut a = p[b.clone()].to_vec();
            matvec_add(&mut a, &p[w.clone()], x);
            matvec_add(&mut a, &p[u.clone()], hin);
            a
        };
        let z: Vec<f64> = gate(&l.w_z, &l.u_z, &l.b_z, h_prev)
            .into_iter()
            .map(sigmoid)
            .collect();
        let r: Vec<f64> = gate(&l.w_r, &l.u_r, &l.b_r, h_prev)
            .into_iter()
            .map(sigmoid)
            .collect();
        let rh: Vec<f64> = r.iter().zip(h_prev).map(|(a, b)| a * b).collect();
        let n: Vec<f64> = gate(&l.w_n, &l.u_n, &l.b_n, &rh)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let h = (0..l.hidden)
            .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
            .collect();
        Step {
            prev,
            h_prev: h_prev.to_vec(),
            z,
            r,
            n,
            h,
            log_probs: None,
        }
    }

    fn head(&self, kind: usize, h: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut logits = self.params[l.head_b[kind].clone()].to_vec();
        matvec_add(&mut logits, &self.params[l.head_w[kind].clone()], h);
        log_softmax(&logits, self.hyper.temperature)
    }

    /// Unrolls the cell, choosing each action with `choose` from its
    /// log-probabilities.
    fn unroll<F>(&self, mut choose: F) -> (Vec<usize>, Vec<Step>)
    where
        F: FnMut(usize, &[f64]) -> usize,
    {
        let steps = self.steps();
        let mut actions = Vec::with_capacity(steps);
        let mut cache = Vec::with_capacity(steps);
        let mut h = vec![0.0; self.layout.hidden];
        for t in 0..steps {
            let prev = (t > 0).then(|| ((t - 1) % DECISIONS_PER_BLOCK, actions[t - 1]));
            let mut step = self.cell(prev, &h);
            let action = if self.forced(&actions, t) {
                0
            } else {
                let lp = self.head(t % DECISIONS_PER_BLOCK, &step.h);
                let a = choose(t, &lp);
                step.log_probs = Some(lp);
                a
            };
            actions.push(action);
            h.clone_from(&step.h);
            cache.push(step);
        }
        (actions, cache)
    }

    /// Per-step log-probabilities of a given action sequence.
    pub fn log_probs(&self, actions: &[usize]) -> Result<Vec<f64>> {
        self.check_actions(actions)?;
        let (_, cache) = self.unroll(|t, _| actions[t]);
        Ok(cache
            .iter()
            .zip(actions)
            .map(|(s, &a)| s.log_probs.as_ref().map_or(0.0, |lp| lp[a]))
            .collect())
    }

    fn check_actions(&self, actions: &[usize]) -> Result<()> {
        if actions.len() != self.steps() {
            return Err(Error::MalformedActions(format!(
                "expected {} actions, got {}",
                self.steps(),
                actions.len()
            )));
        }
        for (t, &a) in actions.iter().enumerate() {
            let arity = self.layout.arities[t % DECISIONS_PER_BLOCK];
            if a >= arity || (self.forced(actions, t) && a != 0) {
                return Err(Error::MalformedActions(format!(
                    "action {t} = {a} is not reachable"
                )));
            }
        }
        Ok(())
    }

    /// Draws one action sequence. The all-skip architecture is redrawn.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        cfg: &SearchSpaceConfig,
        rng: &mut R,
    ) -> Result<(ArchitectureSpec, EpisodeRecord)> {
        self.check_space(cfg)?;
        for _ in 0..MAX_RESAMPLES {
            let (actions, cache) = self.unroll(|_, lp| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (i, l) in lp.iter().enumerate() {
                    acc += l.exp();
                    if u < acc {
                        return i;
                    }
                }
                lp.len() - 1
            });
            match decode(&actions, cfg) {
                Ok(arch) => {
                    let step_logprobs = cache
                        .iter()
                        .zip(&actions)
                        .map(|(s, &a)| s.log_probs.as_ref().map_or(0.0, |lp| lp[a]))
                        .collect();
                    return Ok((
                        arch,
                        EpisodeRecord {
                            actions,
                            step_logprobs,
                            reward: 0.0,
                            feasible: false,
                        },
                    ));
                }
                Err(Error::InvalidArchitecture(_)) => continue,
                Err(e) => return Err(e),
            }
        }
        Err(Error::DegenerateSampling(MAX_RESAMPLES))
    }

    fn accumulate_episode(&self, ep: &EpisodeRecord, advantage: f64, grad: &mut [f64]) {
        let l = &self.layout;
        let p = &self.params;
        let steps = self.steps();
        let (_, cache) = self.unroll(|t, _| ep.actions[t]);
        let tau = self.hyper.temperature;
        let mut dh = vec![0.0; l.hidden];
        for t in (0..steps).rev() {
            let s = &cache[t];
            if let Some(lp) = &s.log_probs {
                let kind = t % DECISIONS_PER_BLOCK;
                // t is zero-based, so gamma^(T - t_1based) = gamma^(steps - 1 - t)
                let weight = self.hyper.discount.powi((steps - 1 - t) as i32) * advantage;
                let dlogit: Vec<f64> = lp
                    .iter()
                    .enumerate()
                    .map(|(i, lpi)| {
                        let onehot = if i == ep.actions[t] { 1.0 } else { 0.0 };
                        weight * (onehot - lpi.exp()) / tau
                    })
                    .collect();
                outer_add(&mut grad[l.head_w[kind].clone()], &dlogit, &s.h);
                grad[l.head_b[kind].clone()]
                    .iter_mut()
                    .zip(&dlogit)
                    .for_each(|(g, d)| *g += d);
                matvec_t_add(&mut dh, &p[l.head_w[kind].clone()], &dlogit);
            }

            let hidden = l.hidden;
            let mut dh_prev = vec![0.0; hidden];
            let mut da_z = vec![0.0; hidden];
            let mut da_r = vec![0.0; hidden];
            let mut da_n = vec![0.0; hidden];
            for i in 0..hidden {
                let dn = dh[i] * (1.0 - s.z[i]);
                let dz = dh[i] * (s.h_prev[i] - s.n[i]);
                dh_prev[i] = dh[i] * s.z[i];
                da_n[i] = dn * (1.0 - s.n[i] * s.n[i]);
                da_z[i] = dz * s.z[i] * (1.0 - s.z[i]);
            }
            let rh: Vec<f64> = s.r.iter().zip(&s.h_prev).map(|(a, b)| a * b).collect();
            let mut drh = vec![0.0; hidden];
            matvec_t_add(&mut drh, &p[l.u_n.clone()], &da_n);
            for i in 0..hidden {
                dh_prev[i] += drh[i] * s.r[i];
                da_r[i] = drh[i] * s.h_prev[i] * s.r[i] * (1.0 - s.r[i]);
            }

            let x_row = l.input_row(s.prev);
            let x = &p[x_row.clone()];
            let mut dx = vec![0.0; l.embed];
            for (w, u, b, da, hin) in [
                (&l.w_z, &l.u_z, &l.b_z, &da_z, &s.h_prev),
                (&l.w_r, &l.u_r, &l.b_r, &da_r, &s.h_prev),
                (&l.w_n, &l.u_n, &l.b_n, &da_n, &rh),
            ] {
                outer_add(&mut grad[w.clone()], da, x);
                outer_add(&mut grad[u.clone()], da, hin);
                grad[b.clone()]
                    .iter_mut()
                    .zip(da)
                    .for_each(|(g, d)| *g += d);
                matvec_t_add(&mut dx, &p[w.clone()], da);
            }
            matvec_t_add(&mut dh_prev, &p[l.u_z.clone()], &da_z);
            matvec_t_add(&mut dh_prev, &p[l.u_r.clone()], &da_r);
            grad[x_row].iter_mut().zip(&dx).for_each(|(g, d)| *g += d);
            dh = dh_prev;
        }
    }

    /// The batch policy-gradient estimate (ascent direction), using the
    /// current baseline for every episode.
    pub fn policy_gradient(&self, batch: &[EpisodeRecord]) -> Result<Vec<f64>> {
        if batch.len() != self.hyper.batch_size {
            return Err(Error::BatchSizeMismatch {
                expected: self.hyper.batch_size,
                got: batch.len(),
            });
        }
        let mut grad = vec![0.0; self.layout.len];
        for ep in batch {
            self.check_actions(&ep.actions)?;
            let advantage = ep.reward - self.baseline;
            if advantage != 0.0 {
                self.accumulate_episode(ep, advantage, &mut grad);
            }
        }
        let m = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        Ok(grad)
    }

    /// One ascent step followed by the baseline update.
    pub fn update(&mut self, batch: &[EpisodeRecord]) -> Result<()> {
        let grad = self.policy_gradient(batch)?;
        if let Some(index) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { index });
        }
        let lr = self.hyper.learning_rate;
        self.params
            .iter_mut()
            .zip(&grad)
            .for_each(|(p, g)| *p += lr * g);
        let mean = batch.iter().map(|e| e.reward).sum::<f64>() / batch.len() as f64;
        let decay = self.hyper.baseline_decay;
        self.baseline = decay * self.baseline + (1.0 - decay) * mean;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&Checkpoint {
            version: CHECKPOINT_VERSION,
            hyper: self.hyper.clone(),
            allow_skip: self.allow_skip,
            num_blocks: self.num_blocks,
            arities: self.layout.arities,
            params: self.params.clone(),
            baseline: self.baseline,
        })
        .expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint =
            serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                ck.version
            )));
        }
        ck.hyper.check()?;
        let layout = Layout::new(ck.arities, ck.hyper.hidden_dim, ck.hyper.embedding_dim);
        if ck.params.len() != layout.len || ck.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig(
                "checkpoint parameters do not fit".into(),
            ));
        }
        Ok(ControllerState {
            hyper: ck.hyper,
            allow_skip: ck.allow_skip,
            num_blocks: ck.num_blocks,
            layout,
            params: ck.params,
            baseline: ck.baseline,
        })
    }
}
