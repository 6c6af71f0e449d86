use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::optim::{Optimizer, OptimizerKind};
use super::tape::Tape;
use super::tensor::Tensor;
use crate::chemio::ComplexRecord;
use crate::datasplit::normalize_label;
use crate::equinet::batchnorm::{BnMode, BnStats};
use crate::equinet::model::{GraphBatch, Model, ModelConfig};
use crate::equinet::params::ParameterStore;
use crate::fingerprint::{morgan_fingerprint, Fingerprint, DEFAULT_RADIUS};
use crate::geograph::{build_graph_with, HeteroGraph};
use crate::par::{self, Exec};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 8,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted and leaves the parameters
    /// untouched.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be finite and non-negative".into()));
        }
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch_size must be at least 1".into()));
        }
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !(unit(self.adam_beta1) && unit(self.adam_beta2)) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam betas must be in [0, 1) and eps positive".into()));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        match self.optimizer {
            OptimizerKind::Sgd => Optimizer::sgd(self.learning_rate),
            OptimizerKind::Adam => Optimizer::adam(
                self.learning_rate,
                self.adam_beta1,
                self.adam_beta2,
                self.adam_eps,
            ),
        }
    }
}

/// One labelled graph ready for training.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub graph: HeteroGraph,
    pub fingerprint: Fingerprint,
    pub label: f64,
}

/// Graph and fingerprint of a record's first pose.
pub fn featurize(record: &ComplexRecord, cfg: &ModelConfig, exec: Exec) -> Result<(HeteroGraph, Fingerprint)> {
    let graph = build_graph_with(&record.ligand, &record.protein, &cfg.cutoffs, exec)?;
    let fp = morgan_fingerprint(&record.ligand, DEFAULT_RADIUS, cfg.fingerprint_width)?;
    Ok((graph, fp))
}

/// Featurize records and normalize their EC50 labels.
pub fn prepare_examples(records: &[ComplexRecord], cfg: &ModelConfig, exec: Exec) -> Result<Vec<Example>> {
    par::map_slice(exec, records, |r| {
        let ec50 = r
            .label_ec50_nm
            .ok_or_else(|| Error::Validation(format!("record {:?} has no ec50_nm label", r.complex_id)))?;
        let (graph, fingerprint) = featurize(r, cfg, Exec::Sequential)?;
        Ok(Example {
            id: r.complex_id.clone(),
            graph,
            fingerprint,
            label: normalize_label(ec50)?,
        })
    })
    .into_iter()
    .collect()
}

/// `(pred - label)²`
pub fn mse_loss(pred: f64, label: f64) -> f64 {
    (pred - label) * (pred - label)
}

/// Mean of [`mse_loss`] over a batch.
pub fn mse_batch(preds: &[f64], labels: &[f64]) -> Result<f64> {
    if preds.len() != labels.len() || preds.is_empty() {
        return Err(Error::Argument("need equally many, non-zero predictions and labels".into()));
    }
    Ok(preds.iter().zip(labels).map(|(&p, &l)| mse_loss(p, l)).sum::<f64>() / preds.len() as f64)
}

/// Result of one forward/backward pass over a batch.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub predictions: Vec<f64>,
    pub grads: ParameterStore,
    /// Adjoint of the node positions, `n_nodes × 3`.
    pub position_grad: Tensor,
    pub bn_stats: Vec<(String, BnStats)>,
}

/// MSE loss of a batch and its gradient with respect to every parameter.
pub fn loss_and_grad(
    model: &Model,
    params: &ParameterStore,
    batch: &GraphBatch,
    labels: &[f64],
    mode: BnMode,
    exec: Exec,
) -> Result<LossGrad> {
    if labels.len() != batch.n_graphs {
        return Err(Error::Argument("one label per graph required".into()));
    }
    if labels.iter().any(|l| !l.is_finite()) {
        return Err(Error::Argument("labels must be finite".into()));
    }
    let mut tape = Tape::with_exec(exec);
    let bound = params.bind(&mut tape);
    let pos = tape.leaf(batch.positions.clone());
    let out = model.forward_tape(&mut tape, &bound, params, batch, pos, mode)?;
    let y = tape.leaf(Tensor::from_vec(labels.len(), 1, labels.to_vec()));
    let diff = tape.sub(out.predictions, y);
    let sq = tape.square(diff);
    let loss = tape.mean_all(sq);
    let grads = tape.backward(loss)?;
    Ok(LossGrad {
        loss: tape.value(loss).item(),
        predictions: tape.value(out.predictions).data.clone(),
        grads: bound.gradients(&grads, &tape),
        position_grad: grads.or_zeros(pos, tape.value(pos)),
        bn_stats: out.bn_stats,
    })
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ParameterStore,
    /// Mini-batch loss at every step, before that step's update.
    pub losses: Vec<f64>,
}

/// Visit order of example indices: one seeded shuffle per epoch.
fn schedule(n: usize, cfg: &TrainConfig) -> Vec<Vec<usize>> {
    let bs = cfg.batch_size.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed);
    let mut order: Vec<usize> = Vec::new();
    let mut batches = Vec::with_capacity(cfg.steps);
    let mut cursor = 0;
    while batches.len() < cfg.steps {
        if cursor + bs > order.len() {
            order = (0..n).collect();
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let mut b = order[cursor..cursor + bs].to_vec();
        b.sort_unstable();
        batches.push(b);
        cursor += bs;
    }
    batches
}

/// Train from a fresh seeded initialization.
pub fn train_examples(examples: &[Example], cfg: &TrainConfig, model_cfg: &ModelConfig, exec: Exec) -> Result<TrainOutput> {
    let model = Model::new(model_cfg)?;
    let params = model.init_params(cfg.seed);
    train_from(&model, params, examples, cfg, exec)
}

/// Continue training `params`.
pub fn train_from(
    model: &Model,
    mut params: ParameterStore,
    examples: &[Example],
    cfg: &TrainConfig,
    exec: Exec,
) -> Result<TrainOutput> {
    cfg.validate()?;
    model.check_params(&params)?;
    if examples.is_empty() {
        return Err(Error::Argument("no training examples".into()));
    }
    let mut opt = cfg.optimizer();
    let mut losses = Vec::with_capacity(cfg.steps);
    let full = if cfg.batch_size >= examples.len() {
        Some(batch_of(examples, &(0..examples.len()).collect::<Vec<_>>())?)
    } else {
        None
    };
    for (step, idx) in schedule(examples.len(), cfg).into_iter().enumerate() {
        let owned;
        let batch = match &full {
            Some(b) => b,
            None => {
                owned = batch_of(examples, &idx)?;
                &owned
            }
        };
        let labels: Vec<f64> = idx.iter().map(|&i| examples[i].label).collect();
        let lg = match loss_and_grad(model, &params, batch, &labels, BnMode::Train, exec) {
            Ok(lg) => lg,
            Err(Error::Numerical { .. }) => return Err(Error::Diverged { step, loss: f64::NAN }),
            Err(e) => return Err(e),
        };
        if !lg.loss.is_finite() || !lg.grads.is_finite() {
            return Err(Error::Diverged { step, loss: lg.loss });
        }
        losses.push(lg.loss);
        opt.step(&mut params, &lg.grads);
        model.update_running(&mut params, &lg.bn_stats)?;
        if !params.is_finite() {
            return Err(Error::Diverged { step, loss: lg.loss });
        }
    }
    Ok(TrainOutput { params, losses })
}

fn batch_of(examples: &[Example], idx: &[usize]) -> Result<GraphBatch> {
    let items: Vec<_> = idx.iter().map(|&i| (&examples[i].graph, &examples[i].fingerprint)).collect();
    GraphBatch::new(&items)
}

/// Train on manifest records; returns the checkpoint and the loss trace.
pub fn train(records: &[ComplexRecord], cfg: &TrainConfig, model_cfg: &ModelConfig) -> Result<(Checkpoint, Vec<f64>)> {
    train_with(records, cfg, model_cfg, Exec::default())
}

pub fn train_with(
    records: &[ComplexRecord],
    cfg: &TrainConfig,
    model_cfg: &ModelConfig,
    exec: Exec,
) -> Result<(Checkpoint, Vec<f64>)> {
    cfg.validate()?;
    let examples = prepare_examples(records, model_cfg, exec)?;
    let out = train_examples(&examples, cfg, model_cfg, exec)?;
    Ok((
        Checkpoint {
            model: model_cfg.clone(),
            train: Some(cfg.clone()),
            params: out.params,
            provenance: None,
        },
        out.losses,
    ))
}
