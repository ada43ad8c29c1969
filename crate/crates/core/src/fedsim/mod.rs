//! FedSGD with per-client importance pruning.

pub mod model;

use rayon::prelude::*;
use thiserror::Error;

use crate::bound::gen_gap_step_bound;
use crate::cost::{self, CostAccumulator, CostError, RoundDecision};
use crate::datasets::{sample_with_replacement, ClientPartition, Dataset};
use crate::rng::rng_from;
use crate::wireless::{ChannelState, ClientProfile};

pub use model::{Model, ModelSpec};

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite {what} in round {round}")]
    Numeric { what: &'static str, round: usize },
    #[error(transparent)]
    Cost(#[from] CostError),
}

pub type Result<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub values: Vec<f64>,
    pub batch_size: usize,
}

impl GradientVector {
    pub fn norm_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Dense global weights plus the masks applied by each client in the latest
/// round.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub masks: Vec<Vec<bool>>,
    /// Number of pruned coordinates per client.
    pub pruned_size: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub model: ModelSpec,
    pub rng_seed: u64,
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::InvalidArgument(format!("learning rate {} must be > 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(SimError::InvalidArgument("batch size must be >= 1".into()));
        }
        if self.rounds == 0 {
            return Err(SimError::InvalidArgument("at least one round is required".into()));
        }
        if let ModelSpec::Mlp { hidden: 0 } = self.model {
            return Err(SimError::InvalidArgument("hidden width must be >= 1".into()));
        }
        Ok(())
    }
}

/// `Q_m = (v_m ρ_m)²`.
pub fn importance_scores(v: &[f64], rho: &[f64]) -> Result<Vec<f64>> {
    if v.len() != rho.len() {
        return Err(SimError::InvalidArgument(format!("gradient has {} entries, weights {}", v.len(), rho.len())));
    }
    Ok(v.iter().zip(rho).map(|(g, w)| (g * w) * (g * w)).collect())
}

/// Number of coordinates pruned at ratio `lambda`.
pub fn pruned_count(lambda: f64, m: usize) -> usize {
    ((lambda * m as f64 + 1e-9).floor() as usize).min(m)
}

/// Keep-mask zeroing the `⌊λM⌋` lowest scores; equal scores prune the lower
/// index first.
pub fn prune_mask(q: &[f64], lambda: f64) -> Vec<bool> {
    let m = q.len();
    let k = pruned_count(lambda, m);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| q[a].total_cmp(&q[b]).then(a.cmp(&b)));
    let mut mask = vec![true; m];
    for &i in &order[..k] {
        mask[i] = false;
    }
    mask
}

/// Mean loss gradient of the masked model on `batch`; pruned coordinates
/// are held at zero in the forward pass and are exactly zero in the result.
pub fn local_gradient(
    model: &Model,
    weights: &[f64],
    mask: &[bool],
    data: &Dataset,
    batch: &[usize],
) -> Result<(f64, GradientVector)> {
    if batch.is_empty() {
        return Err(SimError::InvalidArgument("empty mini-batch".into()));
    }
    if mask.len() != weights.len() || weights.len() != model.num_params() {
        return Err(SimError::InvalidArgument("mask, weights and model size disagree".into()));
    }
    let pruned: Vec<f64> = weights.iter().zip(mask).map(|(&w, &m)| if m { w } else { 0.0 }).collect();
    let (loss, mut grad) = model.loss_grad(&pruned, data, batch);
    for (g, &m) in grad.iter_mut().zip(mask) {
        if !m {
            *g = 0.0;
        }
    }
    Ok((
        loss,
        GradientVector {
            values: grad,
            batch_size: batch.len(),
        },
    ))
}

/// Coordinate-wise mean over the selected clients' gradients, summed in
/// client order.
pub fn aggregate(local: &[GradientVector], selected: &[bool]) -> Result<GradientVector> {
    if local.len() != selected.len() {
        return Err(SimError::InvalidArgument("one gradient per client is required".into()));
    }
    let chosen: Vec<&GradientVector> = local.iter().zip(selected).filter(|(_, &a)| a).map(|(g, _)| g).collect();
    let Some(first) = chosen.first() else {
        return Err(SimError::InvalidArgument("no client selected".into()));
    };
    let m = first.values.len();
    if chosen.iter().any(|g| g.values.len() != m) {
        return Err(SimError::InvalidArgument("gradient lengths differ".into()));
    }
    let mut values = vec![0.0; m];
    for g in &chosen {
        for (acc, v) in values.iter_mut().zip(&g.values) {
            *acc += v;
        }
    }
    let k = chosen.len() as f64;
    values.iter_mut().for_each(|v| *v /= k);
    Ok(GradientVector {
        values,
        batch_size: chosen.iter().map(|g| g.batch_size).sum(),
    })
}

/// `ω ← ω − η g` on the dense global weights.
pub fn global_update(weights: &mut [f64], gradient: &GradientVector, eta: f64) -> Result<()> {
    if !(eta > 0.0) {
        return Err(SimError::InvalidArgument(format!("learning rate {eta} must be > 0")));
    }
    if weights.len() != gradient.values.len() {
        return Err(SimError::InvalidArgument("gradient and weights differ in length".into()));
    }
    for (w, g) in weights.iter_mut().zip(&gradient.values) {
        *w -= eta * g;
    }
    Ok(())
}

pub fn evaluate(model: &Model, weights: &[f64], data: &Dataset, indices: &[usize]) -> Result<(f64, f64)> {
    if indices.is_empty() {
        return Err(SimError::InvalidArgument("empty evaluation set".into()));
    }
    Ok(model.loss_accuracy(weights, data, indices))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub selected_count: usize,
    pub mean_lambda: f64,
    pub round_energy: f64,
    pub round_delay: f64,
    pub cum_energy: f64,
    pub cum_delay: f64,
    /// Loss of the updated global model on the selected clients' training data.
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Squared norm of the aggregated gradient.
    pub grad_norm_sq: f64,
    pub gen_gap_diag: f64,
    /// Mean over selected clients of ‖ω − ω̃‖² / ‖ω‖².
    pub pruning_error_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingRun {
    pub initial_train_loss: f64,
    pub metrics: Vec<RoundMetrics>,
    pub final_state: ModelState,
}

/// Everything the training loop needs besides data and decisions.
#[derive(Debug, Clone, Copy)]
pub struct Environment<'a> {
    pub profiles: &'a [ClientProfile],
    pub channel: &'a ChannelState,
    pub phi: &'a [f64],
}

const BATCH_TAG: u64 = 0xBA7C;
const WARMUP_ROUND: u64 = u64::MAX;

fn draw_batch(partition: &ClientPartition, client: usize, round: u64, z: usize, seed: u64) -> Vec<usize> {
    let mut rng = rng_from(seed, &[BATCH_TAG, round, client as u64]);
    sample_with_replacement(&partition.clients[client].train, z, &mut rng)
}

pub fn run_training(
    data: &Dataset,
    partition: &ClientPartition,
    decisions: &[RoundDecision],
    env: &Environment<'_>,
    config: &TrainConfig,
) -> Result<TrainingRun> {
    config.validate()?;
    let n = partition.num_clients();
    if decisions.len() != config.rounds {
        return Err(SimError::InvalidArgument(format!(
            "{} decisions for {} rounds",
            decisions.len(),
            config.rounds
        )));
    }
    if env.profiles.len() != n || env.phi.len() != n {
        return Err(SimError::InvalidArgument("profiles, phi and partition disagree on client count".into()));
    }
    if let Some(c) = partition.clients.iter().position(|c| c.train.is_empty()) {
        return Err(SimError::InvalidArgument(format!("client {c} has no training data")));
    }
    let test = partition.global_test();
    if test.is_empty() {
        return Err(SimError::InvalidArgument("no test data".into()));
    }
    let model = Model::new(config.model, data.feature_dim(), data.num_classes());
    let m = model.num_params();
    let mut weights = model.init(config.rng_seed);
    let all_train = partition.global_train();
    let (initial_train_loss, _) = model.loss_accuracy(&weights, data, &all_train);

    let dense = vec![true; m];
    let warm: Vec<GradientVector> = (0..n)
        .into_par_iter()
        .map(|c| {
            let batch = draw_batch(partition, c, WARMUP_ROUND, config.batch_size, config.rng_seed);
            local_gradient(&model, &weights, &dense, data, &batch).map(|(_, g)| g)
        })
        .collect::<Result<_>>()?;
    let mut prev_grad = aggregate(&warm, &vec![true; n])?;
    let mut prev_weights = weights.clone();

    let mut acc = CostAccumulator::default();
    let mut metrics = Vec::with_capacity(config.rounds);
    let mut masks = vec![dense.clone(); n];
    for (s, d) in decisions.iter().enumerate() {
        if d.selected.len() != n || !d.selected.iter().any(|&a| a) {
            return Err(SimError::InvalidArgument(format!("round {s} has no valid selection")));
        }
        let q = importance_scores(&prev_grad.values, &prev_weights)?;
        let results: Vec<Option<(f64, GradientVector, Vec<bool>)>> = (0..n)
            .into_par_iter()
            .map(|c| {
                if !d.selected[c] {
                    return Ok(None);
                }
                let mask = prune_mask(&q, d.lambda[c]);
                let batch = draw_batch(partition, c, s as u64, config.batch_size, config.rng_seed);
                let (loss, g) = local_gradient(&model, &weights, &mask, data, &batch)?;
                Ok(Some((loss, g, mask)))
            })
            .collect::<Result<_>>()?;

        let mut locals = Vec::with_capacity(n);
        let mut err_ratio = 0.0;
        let w_norm: f64 = weights.iter().map(|w| w * w).sum();
        for (c, r) in results.into_iter().enumerate() {
            match r {
                Some((loss, g, mask)) => {
                    if !loss.is_finite() || g.values.iter().any(|v| !v.is_finite()) {
                        return Err(SimError::Numeric { what: "local gradient", round: s });
                    }
                    let removed: f64 = weights.iter().zip(&mask).filter(|(_, &k)| !k).map(|(w, _)| w * w).sum();
                    err_ratio += if w_norm > 0.0 { removed / w_norm } else { 0.0 };
                    masks[c] = mask;
                    locals.push(g);
                }
                None => locals.push(GradientVector {
                    values: Vec::new(),
                    batch_size: 0,
                }),
            }
        }
        let selected_count = d.num_selected();
        let global = aggregate(&locals, &d.selected)?;
        prev_weights = weights.clone();
        global_update(&mut weights, &global, config.learning_rate)?;
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(SimError::Numeric { what: "weights", round: s });
        }

        let selected_train: Vec<usize> = (0..n)
            .filter(|&c| d.selected[c])
            .flat_map(|c| partition.clients[c].train.iter().copied())
            .collect();
        let (train_loss, _) = model.loss_accuracy(&weights, data, &selected_train);
        let (test_loss, test_acc) = model.loss_accuracy(&weights, data, &test);
        let mut report = cost::round_costs(d, env.profiles, env.channel)?;
        acc.record(&mut report);
        let grad_norm_sq = global.norm_sq();
        metrics.push(RoundMetrics {
            round: s,
            selected_count,
            mean_lambda: d.mean_lambda(),
            round_energy: report.round_energy,
            round_delay: report.round_delay,
            cum_energy: report.cumulative_energy,
            cum_delay: report.cumulative_delay,
            train_loss,
            test_loss,
            test_acc,
            grad_norm_sq,
            gen_gap_diag: gen_gap_step_bound(&d.selected, env.phi, config.learning_rate, grad_norm_sq),
            pruning_error_ratio: err_ratio / selected_count as f64,
        });
        prev_grad = global;
    }

    let pruned_size = masks.iter().map(|m| m.iter().filter(|&&k| !k).count()).collect();
    Ok(TrainingRun {
        initial_train_loss,
        metrics,
        final_state: ModelState {
            weights,
            masks,
            pruned_size,
        },
    })
}
