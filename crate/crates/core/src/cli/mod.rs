//! Experiment harness: scheme dispatch, seeds, CSV output.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bound::{self, BoundConstants, BoundInputs};
use crate::cost::RoundDecision;
use crate::datasets::{self, ClientPartition, Dataset, PartitionConfig};
use crate::fedsim::{self, Environment, Model, TrainConfig, TrainingRun};
use crate::generalization::{self, generalization_statement};
use crate::optimizer::{self, Budget, Pins, Solution, SolveOptions};
use crate::wireless::{self, ChannelState, ClientProfile};

pub use config::{ConfigError, DatasetSpec, ExperimentConfig, Scheme};

/// Transmit power pinned by the fixed-power baseline, W.
pub const FIXED_POWER: f64 = 0.5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("dataset: {0}")]
    Dataset(#[from] datasets::DatasetError),
    #[error("generalization statement: {0}")]
    Info(#[from] generalization::InfoError),
    #[error("bound: {0}")]
    Bound(#[from] bound::BoundError),
    #[error("{scheme} seed {seed}: {source}")]
    Optimizer {
        scheme: Scheme,
        seed: u64,
        #[source]
        source: optimizer::OptimizerError,
    },
    #[error("{scheme} seed {seed}: training: {source}")]
    Training {
        scheme: Scheme,
        seed: u64,
        #[source]
        source: fedsim::SimError,
    },
    #[error("csv {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("writing {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, RunError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub round: usize,
    pub scheme: String,
    pub seed: u64,
    pub selected_count: usize,
    pub mean_lambda: f64,
    #[serde(rename = "cum_energy_J")]
    pub cum_energy_j: f64,
    pub cum_delay_s: f64,
    pub train_loss: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    /// Bound accumulated through this round; the last row holds the full θ.
    pub theta: f64,
    pub gen_gap_diag: f64,
}

pub const RUN_HEADER: [&str; 12] = [
    "round",
    "scheme",
    "seed",
    "selected_count",
    "mean_lambda",
    "cum_energy_J",
    "cum_delay_s",
    "train_loss",
    "test_loss",
    "test_acc",
    "theta",
    "gen_gap_diag",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub seed: u64,
    pub final_test_acc: f64,
    pub final_test_loss: f64,
    pub final_train_loss: f64,
    #[serde(rename = "total_energy_J")]
    pub total_energy_j: f64,
    pub total_delay_s: f64,
    pub theta: f64,
    pub mean_selected: f64,
    pub mean_lambda: f64,
    pub phi_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub scheme: String,
    pub runs: usize,
    pub mean_final_acc: f64,
    pub std_final_acc: f64,
    pub mean_phi_std: f64,
    #[serde(rename = "mean_energy_J")]
    pub mean_energy_j: f64,
    pub mean_delay_s: f64,
}

/// Everything one (scheme, seed) run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scheme: Scheme,
    pub seed: u64,
    pub phi: Vec<f64>,
    pub solution: Solution,
    pub training: TrainingRun,
    pub records: Vec<RunRecord>,
    pub summary: SummaryRow,
}

/// Seed-dependent inputs shared by every scheme.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub data: Dataset,
    pub partition: ClientPartition,
    pub phi: Vec<f64>,
    pub profiles: Vec<ClientProfile>,
    pub channel: ChannelState,
    pub constants: BoundConstants,
    pub initial_loss: f64,
}

pub fn population_std(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

fn load_dataset(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    Ok(match &cfg.dataset {
        DatasetSpec::Synthetic {
            samples,
            feature_dim,
            classes,
            separation,
        } => datasets::generate_synthetic(*samples, *feature_dim, *classes, *separation, seed)?,
        DatasetSpec::Idx { images, labels } => datasets::load_idx(images, labels)?,
    })
}

/// Per-client φ from the smoothed train and test label histograms.
pub fn client_phis(data: &Dataset, partition: &ClientPartition, eps: f64) -> Result<Vec<f64>> {
    partition
        .clients
        .iter()
        .map(|c| {
            let p = datasets::label_histogram(data, &c.train, eps)?;
            let q = datasets::label_histogram(data, &c.test, eps)?;
            Ok(generalization_statement(&p, &q, c.train.len(), c.test.len())?.phi)
        })
        .collect()
}

pub fn build_scenario(cfg: &ExperimentConfig, seed: u64) -> Result<Scenario> {
    let data = load_dataset(cfg, seed)?;
    let partition = datasets::partition_dirichlet(
        &data,
        &PartitionConfig {
            num_clients: cfg.num_clients,
            dirichlet_sigma: cfg.sigma,
            train_fraction: cfg.train_fraction,
            smoothing_eps: cfg.smoothing_eps,
            rng_seed: seed,
            test_sampling: cfg.test_sampling,
        },
    )?;
    let phi = client_phis(&data, &partition, cfg.smoothing_eps)?;
    let hw = &cfg.hardware;
    let profiles = hw.profiles(cfg.num_clients);
    let mut channel = wireless::sample_channels(
        cfg.num_clients,
        hw.path_loss,
        seed,
        hw.noise_psd,
        hw.downlink_bandwidth,
        hw.server_power,
    );
    if let Some(u) = cfg.noise_psd_client {
        channel.client_noise_psd = vec![u; cfg.num_clients];
    }
    let model = Model::new(cfg.model, data.feature_dim(), data.num_classes());
    let w0 = model.init(seed);
    let (initial_loss, _) = model.loss_accuracy(&w0, &data, &partition.global_train());
    let constants = bound::derive_constants(&BoundInputs {
        lipschitz: cfg.lipschitz,
        grad_sq: cfg.grad_sq,
        model_sq: cfg.model_sq,
        learning_rate: hw.learning_rate,
        batch_size: hw.batch_size,
        last_round: cfg.rounds - 1,
        loss_gap: cfg.loss_gap.unwrap_or(initial_loss),
    })?;
    Ok(Scenario {
        data,
        partition,
        phi,
        profiles,
        channel,
        constants,
        initial_loss,
    })
}

/// Optimizer options for a scheme.
pub fn scheme_options(cfg: &ExperimentConfig, scheme: Scheme) -> SolveOptions {
    let mut pins = Pins::default();
    match scheme {
        Scheme::FixedPruning => pins.lambda = Some(0.0),
        Scheme::FixedSelection => pins.all_selected = true,
        Scheme::FixedPower => pins.power = Some(FIXED_POWER),
        Scheme::FixedFrequency => pins.freq_at_max = true,
        Scheme::Proposed | Scheme::NoGen => {}
    }
    SolveOptions {
        lambda_max: cfg.hardware.lambda_max,
        selection: cfg.selection,
        pins,
        max_outer: cfg.max_outer,
        outer_tol: cfg.outer_tol,
        sca_max_iter: cfg.sca_max_iter,
        sca_tol: cfg.sca_tol,
        selection_max_iter: cfg.selection_max_iter,
    }
}

pub fn solve_scheme(cfg: &ExperimentConfig, sc: &Scenario, scheme: Scheme, seed: u64) -> Result<Solution> {
    let phi_opt: Vec<f64> = match scheme {
        Scheme::NoGen => vec![0.0; sc.phi.len()],
        _ if cfg.normalize_phi => generalization::normalize_phis(&sc.phi),
        _ => sc.phi.clone(),
    };
    optimizer::solve(
        &sc.profiles,
        &sc.channel,
        &phi_opt,
        &sc.constants,
        &Budget::uniform(cfg.energy_budget, cfg.delay_budget),
        &scheme_options(cfg, scheme),
    )
    .map_err(|source| RunError::Optimizer { scheme, seed, source })
}

/// Train on fixed decisions and turn the result into CSV rows.
pub fn train_decisions(
    cfg: &ExperimentConfig,
    sc: &Scenario,
    decisions: &[RoundDecision],
    scheme: Scheme,
    seed: u64,
) -> Result<(TrainingRun, Vec<RunRecord>, SummaryRow)> {
    let env = Environment {
        profiles: &sc.profiles,
        channel: &sc.channel,
        phi: &sc.phi,
    };
    let tc = TrainConfig {
        learning_rate: cfg.hardware.learning_rate,
        batch_size: cfg.hardware.batch_size,
        rounds: cfg.rounds,
        model: cfg.model,
        rng_seed: seed,
    };
    let training = fedsim::run_training(&sc.data, &sc.partition, decisions, &env, &tc)
        .map_err(|source| RunError::Training { scheme, seed, source })?;
    let bv = bound::theta(decisions, &sc.phi, &sc.constants)?;
    let mut acc = sc.constants.alpha;
    let records: Vec<RunRecord> = training
        .metrics
        .iter()
        .zip(&bv.per_round_terms)
        .map(|(m, t)| {
            acc += t.total();
            RunRecord {
                round: m.round,
                scheme: scheme.to_string(),
                seed,
                selected_count: m.selected_count,
                mean_lambda: m.mean_lambda,
                cum_energy_j: m.cum_energy,
                cum_delay_s: m.cum_delay,
                train_loss: m.train_loss,
                test_loss: m.test_loss,
                test_acc: m.test_acc,
                theta: acc,
                gen_gap_diag: m.gen_gap_diag,
            }
        })
        .collect();
    let last = records.last().expect("rounds >= 1");
    let n = records.len() as f64;
    let summary = SummaryRow {
        scheme: scheme.to_string(),
        seed,
        final_test_acc: last.test_acc,
        final_test_loss: last.test_loss,
        final_train_loss: last.train_loss,
        total_energy_j: last.cum_energy_j,
        total_delay_s: last.cum_delay_s,
        theta: bv.theta,
        mean_selected: records.iter().map(|r| r.selected_count as f64).sum::<f64>() / n,
        mean_lambda: records.iter().map(|r| r.mean_lambda).sum::<f64>() / n,
        phi_std: population_std(&sc.phi),
    };
    Ok((training, records, summary))
}

pub fn run_one(cfg: &ExperimentConfig, sc: &Scenario, scheme: Scheme, seed: u64) -> Result<RunOutput> {
    let solution = solve_scheme(cfg, sc, scheme, seed)?;
    let (training, records, summary) = train_decisions(cfg, sc, &solution.decisions, scheme, seed)?;
    Ok(RunOutput {
        scheme,
        seed,
        phi: sc.phi.clone(),
        solution,
        training,
        records,
        summary,
    })
}

/// Every (seed, scheme) pair, in parallel, ordered by seed then scheme.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.validate()?;
    let per_seed: Vec<Result<Vec<RunOutput>>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let sc = build_scenario(cfg, seed)?;
            cfg.schemes
                .par_iter()
                .map(|&scheme| run_one(cfg, &sc, scheme, seed))
                .collect()
        })
        .collect();
    let mut out = Vec::new();
    for r in per_seed {
        out.extend(r?);
    }
    Ok(out)
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|source| RunError::Io {
        path: p.to_path_buf(),
        source,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRecord>> {
    let csv_err = |source| RunError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

pub fn run_file_name(scheme: Scheme, seed: u64) -> String {
    format!("{scheme}_seed{seed}.csv")
}

/// Write `runs/<scheme>_seed<k>.csv` and `summary.csv` under `dir`.
pub fn write_outputs(dir: &Path, outputs: &[RunOutput]) -> Result<()> {
    let runs = dir.join("runs");
    create_dir(&runs)?;
    outputs
        .par_iter()
        .try_for_each(|o| write_csv(&runs.join(run_file_name(o.scheme, o.seed)), &o.records))?;
    let summary: Vec<_> = outputs.iter().map(|o| o.summary.clone()).collect();
    write_csv(&dir.join("summary.csv"), &summary)
}

pub fn run(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    let outputs = run_all(cfg)?;
    write_outputs(&cfg.out, &outputs)?;
    Ok(outputs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Sigma,
    EnergyBudget,
    DelayBudget,
}

impl SweepAxis {
    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Sigma => "sigma",
            SweepAxis::EnergyBudget => "E0",
            SweepAxis::DelayBudget => "T0",
        }
    }

    fn apply(&self, cfg: &mut ExperimentConfig, v: f64) {
        match self {
            SweepAxis::Sigma => cfg.sigma = v,
            SweepAxis::EnergyBudget => cfg.energy_budget = v,
            SweepAxis::DelayBudget => cfg.delay_budget = v,
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sigma" => Ok(SweepAxis::Sigma),
            "E0" => Ok(SweepAxis::EnergyBudget),
            "T0" => Ok(SweepAxis::DelayBudget),
            _ => Err(format!("unknown sweep axis `{s}` (expected sigma, E0 or T0)")),
        }
    }
}

/// Parse `AXIS=v1,v2,...`.
pub fn parse_sweep(spec: &str) -> std::result::Result<(SweepAxis, Vec<f64>), String> {
    let (axis, vals) = spec.split_once('=').ok_or_else(|| format!("expected AXIS=v1,v2,..., got `{spec}`"))?;
    let axis: SweepAxis = axis.trim().parse()?;
    let values = if vals.trim().is_empty() {
        Vec::new()
    } else {
        vals.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}")))
            .collect::<std::result::Result<_, _>>()?
    };
    Ok((axis, values))
}

/// Sweep one axis. Each value's runs go to `<out>/sweep_<axis>/<value>/`,
/// the aggregate to `<out>/sweep_<axis>.csv`.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(RunError::InvalidArgument("sweep needs at least one value".into()));
    }
    if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(RunError::InvalidArgument(format!("sweep values must be positive, got {v}")));
    }
    let base = cfg.out.join(format!("sweep_{}", axis.name()));
    let per_value: Vec<Result<Vec<RunOutput>>> = values
        .par_iter()
        .map(|&v| {
            let mut c = cfg.clone();
            axis.apply(&mut c, v);
            c.out = base.join(format!("{v}"));
            run(&c)
        })
        .collect();
    let mut rows = Vec::new();
    for (&v, outs) in values.iter().zip(per_value) {
        let outs = outs?;
        for &scheme in &cfg.schemes {
            let mine: Vec<&RunOutput> = outs.iter().filter(|o| o.scheme == scheme).collect();
            let n = mine.len() as f64;
            let accs: Vec<f64> = mine.iter().map(|o| o.summary.final_test_acc).collect();
            rows.push(SweepRow {
                axis: axis.name().into(),
                value: v,
                scheme: scheme.to_string(),
                runs: mine.len(),
                mean_final_acc: accs.iter().sum::<f64>() / n,
                std_final_acc: population_std(&accs),
                mean_phi_std: mine.iter().map(|o| o.summary.phi_std).sum::<f64>() / n,
                mean_energy_j: mine.iter().map(|o| o.summary.total_energy_j).sum::<f64>() / n,
                mean_delay_s: mine.iter().map(|o| o.summary.total_delay_s).sum::<f64>() / n,
            });
        }
    }
    create_dir(&cfg.out)?;
    write_csv(&cfg.out.join(format!("sweep_{}.csv", axis.name())), &rows)?;
    Ok(rows)
}
