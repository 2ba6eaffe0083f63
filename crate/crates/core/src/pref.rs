//! Bradley-Terry preference model over trajectory segments and the reward
//! network it trains.
//!
//! The probability that segment 1 is preferred is the logistic of the
//! difference of summed per-step rewards. The network is fit by minimizing the
//! mean cross-entropy of the operator's labels.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::nn::{Mlp, Optimizer, OptimizerKind, Trace};
use crate::sim::{FeatureShape, Observation};
use crate::{Error, Result};

/// One observation-action pair of a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub observation: Observation,
    /// 1-based viewpoint index.
    pub action: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySegment {
    pub id: String,
    /// Reconstruction fused from this segment's captures.
    pub recon_id: String,
    pub steps: Vec<Step>,
}

/// Binary preference: which side of the pair was judged better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Mu {
    Left,
    Right,
}

impl Mu {
    pub fn flip(self) -> Self {
        match self {
            Mu::Left => Mu::Right,
            Mu::Right => Mu::Left,
        }
    }
}

impl TryFrom<u8> for Mu {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Mu::Left),
            2 => Ok(Mu::Right),
            other => Err(format!("mu must be 1 or 2, got {other}")),
        }
    }
}

impl From<Mu> for u8 {
    fn from(m: Mu) -> u8 {
        match m {
            Mu::Left => 1,
            Mu::Right => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Labeler {
    Oracle,
    Human,
}

/// One line of `preferences.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub pair_id: String,
    pub left: String,
    pub right: String,
    pub mu: Mu,
    pub labeler: Labeler,
    /// Unix milliseconds.
    pub ts: u64,
}

/// Labeled pairs plus the segments they reference.
#[derive(Debug, Clone, Default)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
    segments: BTreeMap<String, TrajectorySegment>,
}

impl PreferenceDataset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_segment(&mut self, segment: TrajectorySegment) {
        self.segments.insert(segment.id.clone(), segment);
    }

    pub fn push(&mut self, record: PreferenceRecord) -> Result<()> {
        if record.left == record.right {
            return Err(Error::Data(format!("pair {} compares a segment with itself", record.pair_id)));
        }
        for id in [&record.left, &record.right] {
            if !self.segments.contains_key(id) {
                return Err(Error::Data(format!("unresolvable segment id {id:?}")));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn segment(&self, id: &str) -> Option<&TrajectorySegment> {
        self.segments.get(id)
    }

    pub fn segments(&self) -> impl Iterator<Item = &TrajectorySegment> {
        self.segments.values()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Resolves every record into a `(left, right, mu)` triple.
    pub fn resolved(&self) -> Result<Vec<(&TrajectorySegment, &TrajectorySegment, Mu)>> {
        self.records
            .iter()
            .map(|r| {
                let get = |id: &str| {
                    self.segments
                        .get(id)
                        .ok_or_else(|| Error::Data(format!("unresolvable segment id {id:?}")))
                };
                Ok((get(&r.left)?, get(&r.right)?, r.mu))
            })
            .collect()
    }
}

/// Standardization applied to raw reward outputs before they reach PPO.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardNorm {
    pub mean: f64,
    pub std: f64,
}

impl Default for RewardNorm {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

/// Per-step reward network: `features ++ one_hot(action)` → scalar.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel {
    pub net: Mlp,
    pub shape: FeatureShape,
    pub action_count: usize,
    pub norm: RewardNorm,
}

impl RewardModel {
    fn sizes(shape: FeatureShape, action_count: usize, hidden: &[usize]) -> Vec<usize> {
        let mut sizes = vec![shape.len() + action_count];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        sizes
    }

    pub fn zeros(shape: FeatureShape, action_count: usize, hidden: &[usize]) -> Self {
        Self {
            net: Mlp::zeros(&Self::sizes(shape, action_count, hidden)),
            shape,
            action_count,
            norm: RewardNorm::default(),
        }
    }

    pub fn random(shape: FeatureShape, action_count: usize, hidden: &[usize], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            net: Mlp::init(&Self::sizes(shape, action_count, hidden), 1.0, &mut rng),
            shape,
            action_count,
            norm: RewardNorm::default(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.net.params.len()
    }

    fn input(&self, obs: &Observation, action: usize) -> Vec<f64> {
        debug_assert!((1..=self.action_count).contains(&action));
        let mut x = Vec::with_capacity(self.net.input_dim());
        x.extend_from_slice(&obs.features);
        x.resize(self.shape.len() + self.action_count, 0.0);
        x[self.shape.len() + action - 1] = 1.0;
        x
    }

    /// Raw reward estimate for one step.
    pub fn step_reward(&self, obs: &Observation, action: usize) -> f64 {
        self.net.forward(&self.input(obs, action))[0]
    }

    /// Standardized reward handed to the policy optimizer.
    pub fn standardized(&self, obs: &Observation, action: usize) -> f64 {
        (self.step_reward(obs, action) - self.norm.mean) / self.norm.std
    }

    /// Fits the standardization to every step of the given segments.
    pub fn fit_norm<'a>(&mut self, segments: impl IntoIterator<Item = &'a TrajectorySegment>) {
        let values: Vec<f64> = segments
            .into_iter()
            .flat_map(|s| s.steps.iter())
            .map(|st| self.step_reward(&st.observation, st.action))
            .collect();
        if values.is_empty() {
            self.norm = RewardNorm::default();
            return;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        self.norm = RewardNorm {
            mean,
            std: if std > 1e-8 { std } else { 1.0 },
        };
    }

    pub fn to_checkpoint(&self, version: u64) -> Checkpoint {
        let meta = serde_json::json!({
            "sizes": self.net.sizes(),
            "shape": self.shape,
            "action_count": self.action_count,
            "norm": self.norm,
        });
        let mut ck = Checkpoint::new("reward_model", version, meta);
        ck.push("params", &[self.net.params.len()], &self.net.params);
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.header.kind != "reward_model" {
            return Err(Error::Data(format!("expected reward_model checkpoint, got {}", ck.header.kind)));
        }
        #[derive(Deserialize)]
        struct Meta {
            sizes: Vec<usize>,
            shape: FeatureShape,
            action_count: usize,
            norm: RewardNorm,
        }
        let meta: Meta = serde_json::from_value(ck.header.meta.clone())?;
        let net = Mlp::from_params(&meta.sizes, ck.tensor("params")?.to_vec())
            .ok_or_else(|| Error::Data("reward checkpoint parameter count mismatch".into()))?;
        Ok(Self {
            net,
            shape: meta.shape,
            action_count: meta.action_count,
            norm: meta.norm,
        })
    }
}

/// Sum of per-step raw rewards over a segment.
pub fn segment_return(model: &RewardModel, segment: &TrajectorySegment) -> f64 {
    segment
        .steps
        .iter()
        .map(|s| model.step_reward(&s.observation, s.action))
        .sum()
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(logistic(x))` without overflow.
fn neg_log_logistic(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Probability that the segment with return `r1` is preferred over one with return `r2`.
pub fn preference_probability(r1: f64, r2: f64) -> f64 {
    logistic(r1 - r2)
}

pub type Batch<'a> = [(&'a TrajectorySegment, &'a TrajectorySegment, Mu)];

fn signed_margin(model: &RewardModel, left: &TrajectorySegment, right: &TrajectorySegment, mu: Mu) -> f64 {
    let d = segment_return(model, left) - segment_return(model, right);
    match mu {
        Mu::Left => d,
        Mu::Right => -d,
    }
}

/// Mean cross-entropy of the labels under the Bradley-Terry model.
pub fn ce_loss(model: &RewardModel, batch: &Batch<'_>) -> f64 {
    assert!(!batch.is_empty(), "ce_loss needs a non-empty batch");
    batch
        .iter()
        .map(|(l, r, mu)| neg_log_logistic(signed_margin(model, l, r, *mu)))
        .sum::<f64>()
        / batch.len() as f64
}

/// Exact gradient of [`ce_loss`] with respect to every network parameter.
pub fn loss_gradient(model: &RewardModel, batch: &Batch<'_>) -> Vec<f64> {
    let (grad, _) = loss_and_gradient(model, batch);
    grad
}

/// Loss and gradient in one pass.
pub fn loss_and_gradient(model: &RewardModel, batch: &Batch<'_>) -> (Vec<f64>, f64) {
    assert!(!batch.is_empty(), "loss_gradient needs a non-empty batch");
    let n = batch.len() as f64;
    let mut grad = vec![0.0; model.param_count()];
    let mut loss = 0.0;
    let mut traces: Vec<Trace> = Vec::new();
    for (left, right, mu) in batch {
        let sign = match mu {
            Mu::Left => 1.0,
            Mu::Right => -1.0,
        };
        traces.clear();
        let mut ret = [0.0f64; 2];
        for (side, seg) in [left, right].iter().enumerate() {
            for st in &seg.steps {
                let mut t = Trace::default();
                model.net.forward_trace(&model.input(&st.observation, st.action), &mut t);
                ret[side] += t.output()[0];
                traces.push(t);
            }
        }
        let margin = sign * (ret[0] - ret[1]);
        loss += neg_log_logistic(margin);
        // d/dm of -ln σ(m) = -(1 - σ(m)) = -σ(-m)
        let dmargin = -logistic(-margin) / n;
        let d_left = sign * dmargin;
        let k_left = left.steps.len();
        for (i, t) in traces.iter().enumerate() {
            let g = if i < k_left { d_left } else { -d_left };
            model.net.backward(t, &[g], &mut grad);
        }
    }
    (grad, loss / n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardTrainConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerKind,
    /// Continue from the previous model instead of a fresh initialization.
    pub warm_start: bool,
}

impl Default for RewardTrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 60,
            optimizer: OptimizerKind::Adam,
            warm_start: false,
        }
    }
}

impl RewardTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::Config("reward training needs positive batch, epochs and lr".into()));
        }
        Ok(())
    }
}

/// Output of [`train_reward_model`].
#[derive(Debug, Clone)]
pub struct RewardTraining {
    pub model: RewardModel,
    /// Mean pre-update batch loss per epoch.
    pub loss_curve: Vec<f64>,
}

/// Mini-batch training of the reward model on every record of `dataset`.
///
/// Deterministic for a given `(dataset, config, seed)`. The returned model's
/// standardization is fit to all segments in the dataset.
pub fn train_reward_model(
    dataset: &PreferenceDataset,
    config: &RewardTrainConfig,
    shape: FeatureShape,
    action_count: usize,
    seed: u64,
    init: Option<&RewardModel>,
) -> Result<RewardTraining> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::Data("preference dataset is empty".into()));
    }
    let triples = dataset.resolved()?;
    for (l, r, _) in &triples {
        for seg in [l, r] {
            if seg.steps.is_empty() {
                return Err(Error::Data(format!("segment {} has no steps", seg.id)));
            }
            if let Some(bad) = seg.steps.iter().find(|s| s.action == 0 || s.action > action_count) {
                return Err(Error::Data(format!("segment {} has action {} outside 1..={action_count}", seg.id, bad.action)));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = match init {
        Some(m) if config.warm_start => m.clone(),
        _ => {
            use rand::Rng;
            RewardModel::random(shape, action_count, &config.hidden, rng.gen())
        }
    };
    let mut opt = Optimizer::new(config.optimizer, config.learning_rate, model.param_count());
    let mut order: Vec<usize> = (0..triples.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<_> = chunk.iter().map(|&i| triples[i]).collect();
            let (grad, loss) = loss_and_gradient(&model, &batch);
            epoch_loss += loss * batch.len() as f64;
            seen += batch.len();
            opt.step(&mut model.net.params, &grad);
        }
        loss_curve.push(epoch_loss / seen as f64);
    }
    model.fit_norm(dataset.segments());
    Ok(RewardTraining { model, loss_curve })
}
