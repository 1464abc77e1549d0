//! Training: the combined objective with analytic gradients, momentum SGD
//! under a cosine-annealed learning rate, category-balanced batches, and the
//! outer loop that re-clusters the agency set and refreshes the leaders.

mod loss;
mod model;

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use loss::{cross_entropy, hash_regularizer, leader_contrast, supervised_contrastive, LossGrad};
pub use model::{ForwardCache, ForwardOutput, Linear, ModelParams, ModelShape, OutputGrads, PROJ_EPS};

use crate::encode::{build_leaders, cluster_matrix, rectify, ClusteringConfig, LeaderSet};
use crate::error::{Error, Result};
use crate::types::{LabeledDataset, RngSeed, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub lr: f64,
    /// Learning rate reached at the end of the cosine schedule.
    pub lr_min: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_categories: usize,
    pub batch_per_category: usize,
    pub alpha_warmup_epochs: usize,
    pub recluster_every: usize,
    /// SGD steps per epoch; 0 means one pass worth of samples.
    pub iters_per_epoch: usize,
    pub proj_dim: usize,
    pub hash_bits: usize,
    pub clustering: ClusteringConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            beta: 1.0,
            tau: 0.05,
            lr: 1e-2,
            lr_min: 1e-5,
            weight_decay: 5e-5,
            momentum: 0.9,
            epochs: 100,
            batch_categories: 8,
            batch_per_category: 16,
            alpha_warmup_epochs: 50,
            recluster_every: 1,
            iters_per_epoch: 0,
            proj_dim: 64,
            hash_bits: 12,
            clustering: ClusteringConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return bad("alpha and beta must be >= 0");
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return bad("tau must be > 0");
        }
        if !(self.lr >= 0.0 && self.lr_min >= 0.0 && self.weight_decay >= 0.0) {
            return bad("lr, lr_min and weight_decay must be >= 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if self.batch_categories == 0 || self.batch_per_category == 0 {
            return bad("batch sizes must be positive");
        }
        if self.recluster_every == 0 {
            return bad("recluster_every must be positive");
        }
        if self.proj_dim == 0 || self.hash_bits == 0 || self.hash_bits > 64 {
            return bad("proj_dim must be positive and hash_bits in 1..=64");
        }
        Ok(())
    }

    /// Leader-loss weight at `epoch`: linear from `0.1·alpha` at epoch 0 to
    /// `alpha` at `alpha_warmup_epochs`, constant afterwards.
    pub fn alpha_at(&self, epoch: usize) -> f64 {
        if epoch >= self.alpha_warmup_epochs {
            return self.alpha;
        }
        let t = epoch as f64 / self.alpha_warmup_epochs as f64;
        self.alpha * (0.1 + 0.9 * t)
    }

    /// Cosine annealing from `lr` at epoch 0 towards `lr_min` at `epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.epochs == 0 {
            return self.lr;
        }
        let t = epoch as f64 / self.epochs as f64;
        self.lr_min + 0.5 * (self.lr - self.lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
    }
}

/// Relative weights of the four objective terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub sup: f64,
    pub reg: f64,
    pub sle: f64,
    pub ce: f64,
}

impl LossWeights {
    pub fn at_epoch(cfg: &TrainConfig, epoch: usize) -> Self {
        Self {
            sup: 1.0,
            reg: 1.0,
            sle: cfg.alpha_at(epoch),
            ce: cfg.beta,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub sup: f64,
    pub reg: f64,
    pub sle: f64,
    pub ce: f64,
    pub total: f64,
    /// Whether any anchor in the batch had a positive.
    pub has_positives: bool,
}

/// Weighted objective on one batch and its gradient for every parameter.
///
/// A term with zero weight is neither evaluated nor differentiated, so the
/// leader term may be switched off when fewer than two leaders exist.
pub fn objective(
    params: &ModelParams,
    inputs: &[&[f64]],
    labels: &[i64],
    leaders: &LeaderSet,
    tau: f64,
    w: LossWeights,
) -> Result<(LossBreakdown, ModelParams)> {
    if inputs.len() != labels.len() {
        return Err(Error::LengthMismatch(inputs.len(), labels.len()));
    }
    let caches: Vec<ForwardCache> = inputs.iter().map(|x| params.forward_cached(x)).collect();
    let projs: Vec<Vec<f64>> = caches.iter().map(|c| c.proj.clone()).collect();
    let hashes: Vec<Vec<f64>> = caches.iter().map(|c| c.hash.clone()).collect();
    let features: Vec<Vec<f64>> = caches.iter().map(|c| c.feature.clone()).collect();
    let logits: Vec<Vec<f64>> = caches.iter().map(|c| c.logits.clone()).collect();

    let mut out = LossBreakdown::default();
    let (sup, has_pos) = supervised_contrastive(&projs, labels, tau);
    out.sup = sup.value;
    out.has_positives = has_pos;
    let reg = hash_regularizer(&hashes);
    out.reg = reg.value;
    let sle = if w.sle != 0.0 {
        let l = leader_contrast(&features, labels, leaders, tau)?;
        out.sle = l.value;
        Some(l)
    } else {
        None
    };
    let ce = if w.ce != 0.0 {
        let targets = labels
            .iter()
            .map(|&l| {
                params.class_index(l).ok_or(Error::LabelOutOfRange {
                    label: l,
                    classes: params.class_labels.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let l = cross_entropy(&logits, &targets)?;
        out.ce = l.value;
        Some(l)
    } else {
        None
    };
    out.total = w.sup * out.sup + w.reg * out.reg + w.sle * out.sle + w.ce * out.ce;

    let scale = |v: &[f64], s: f64| v.iter().map(|x| x * s).collect::<Vec<f64>>();
    let mut grads = params.zeros_like();
    for (n, cache) in caches.iter().enumerate() {
        let up = OutputGrads {
            feature: sle.as_ref().map(|l| scale(&l.grad[n], w.sle)),
            proj: (w.sup != 0.0).then(|| scale(&sup.grad[n], w.sup)),
            hash: (w.reg != 0.0).then(|| scale(&reg.grad[n], w.reg)),
            logits: ce.as_ref().map(|l| scale(&l.grad[n], w.ce)),
        };
        params.backward(cache, &up, &mut grads);
    }
    Ok((out, grads))
}

/// The full objective `L_sup + L_reg + α(epoch)·L_sle + β·L_c`.
pub fn total_loss(
    params: &ModelParams,
    inputs: &[&[f64]],
    labels: &[i64],
    leaders: &LeaderSet,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(LossBreakdown, ModelParams)> {
    objective(
        params,
        inputs,
        labels,
        leaders,
        cfg.tau,
        LossWeights::at_epoch(cfg, epoch),
    )
}

/// Momentum SGD with decoupled-from-loss weight decay added to the gradient.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: ModelParams,
}

impl Sgd {
    pub fn new(params: &ModelParams, momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            velocity: params.zeros_like(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64) {
        let mu = self.momentum;
        let wd = self.weight_decay;
        for (((_, p), (_, v)), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.velocity.tensors_mut())
            .zip(grads.tensors())
        {
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(g) {
                let d = g + wd * *p;
                *v = mu * *v + d;
                *p -= lr * *v;
            }
        }
    }

    /// Follows a classifier remap; velocity of new rows starts at zero.
    pub fn remap_classifier(&mut self, labels: &[i64]) {
        self.velocity.remap_classifier(labels, || 0.0);
    }
}

/// Indices of an `N^C × N^I` batch: up to `categories` labels drawn without
/// replacement, then up to `per_category` rows of each, also without
/// replacement. Unlabeled rows are never drawn.
pub fn sample_batch<R: Rng>(
    labels: &[i64],
    categories: usize,
    per_category: usize,
    rng: &mut R,
) -> Vec<usize> {
    let mut groups: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        if l >= 0 {
            groups.entry(l).or_default().push(i);
        }
    }
    let keys: Vec<i64> = groups.keys().copied().collect();
    let mut batch = Vec::with_capacity(categories * per_category);
    for key in keys.choose_multiple(rng, categories) {
        let members = &groups[key];
        batch.extend(members.choose_multiple(rng, per_category).copied());
    }
    batch
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub num_leaders: usize,
    pub delta_max: f64,
    /// Means over the epoch's batches.
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Leaders over the final features, with their `delta_max`.
    pub leaders: LeaderSet,
    /// Agency set with the labels of the last rectification.
    pub agency: LabeledDataset,
    pub history: Vec<EpochStats>,
}

fn class_labels(data: &LabeledDataset) -> Vec<i64> {
    data.present_labels().into_iter().collect()
}

fn recluster(
    params: &ModelParams,
    data: &LabeledDataset,
    cfg: &ClusteringConfig,
) -> Result<(LabeledDataset, crate::types::EmbeddingMatrix)> {
    let features = params.features(data.embeddings())?;
    let assign = cluster_matrix(&features, cfg)?;
    Ok((rectify(&assign, data)?, features))
}

/// Trains on the agency set (support rows carry the ground truth; generated
/// rows are relabeled by clustering).
///
/// Each epoch starts by refreshing the leaders from the current features,
/// re-clustering and rectifying every `recluster_every` epochs. Fails with
/// `DivergenceDetected` when the loss becomes non-finite.
pub fn train(data: &LabeledDataset, cfg: &TrainConfig, seed: RngSeed) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut init_rng = seed.rng(Stream::Init);
    let mut batch_rng = seed.rng(Stream::Batches);
    let shape = ModelShape {
        input_dim: data.dim(),
        proj_dim: cfg.proj_dim,
        hash_bits: cfg.hash_bits,
    };

    // the adapter starts as the identity, so initial features are the inputs
    let mut agency = rectify(&cluster_matrix(data.embeddings(), &cfg.clustering)?, data)?;
    let mut params = ModelParams::init(shape, class_labels(&agency), &mut init_rng);
    let mut sgd = Sgd::new(&params, cfg.momentum, cfg.weight_decay);
    let bound = 1.0 / (data.dim() as f64).sqrt();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let features = if epoch > 0 && epoch % cfg.recluster_every == 0 {
            let (next, features) = recluster(&params, data, &cfg.clustering)?;
            agency = next;
            let labels = class_labels(&agency);
            params.remap_classifier(&labels, || init_rng.random_range(-bound..bound));
            sgd.remap_classifier(&labels);
            features
        } else {
            params.features(agency.embeddings())?
        };
        let leaders = build_leaders(&agency, &features)?;

        let mut weights = LossWeights::at_epoch(cfg, epoch);
        if leaders.len() < 2 {
            log::warn!("epoch {epoch}: fewer than two leaders, leader loss disabled");
            weights.sle = 0.0;
        }
        let lr = cfg.lr_at(epoch);
        let batch_size = cfg.batch_categories * cfg.batch_per_category;
        let iters = if cfg.iters_per_epoch > 0 {
            cfg.iters_per_epoch
        } else {
            agency.len().div_ceil(batch_size).max(1)
        };

        let mut sum = LossBreakdown::default();
        for _ in 0..iters {
            let idx = sample_batch(
                agency.labels(),
                cfg.batch_categories,
                cfg.batch_per_category,
                &mut batch_rng,
            );
            let inputs: Vec<&[f64]> = idx.iter().map(|&i| agency.embeddings().row(i)).collect();
            let labels: Vec<i64> = idx.iter().map(|&i| agency.labels()[i]).collect();
            let (b, grads) = objective(&params, &inputs, &labels, &leaders, cfg.tau, weights)?;
            if !b.total.is_finite() {
                log::error!("non-finite loss at epoch {epoch}: {b:?}");
                return Err(Error::DivergenceDetected {
                    epoch,
                    loss: b.total,
                });
            }
            sgd.step(&mut params, &grads, lr);
            if let Err(e) = params.check_finite() {
                log::error!("parameters became non-finite at epoch {epoch}: {e}");
                return Err(Error::DivergenceDetected {
                    epoch,
                    loss: f64::NAN,
                });
            }
            sum.sup += b.sup;
            sum.reg += b.reg;
            sum.sle += b.sle;
            sum.ce += b.ce;
            sum.total += b.total;
            sum.has_positives |= b.has_positives;
        }
        let k = iters as f64;
        let loss = LossBreakdown {
            sup: sum.sup / k,
            reg: sum.reg / k,
            sle: sum.sle / k,
            ce: sum.ce / k,
            total: sum.total / k,
            has_positives: sum.has_positives,
        };
        log::debug!(
            "epoch {epoch}: lr {lr:.5} leaders {} loss {:.4}",
            leaders.len(),
            loss.total
        );
        history.push(EpochStats {
            epoch,
            lr,
            alpha: weights.sle,
            num_leaders: leaders.len(),
            delta_max: leaders.delta_max,
            loss,
        });
    }

    let features = params.features(agency.embeddings())?;
    let leaders = build_leaders(&agency, &features)?;
    Ok(TrainOutcome {
        params,
        leaders,
        agency,
        history,
    })
}
