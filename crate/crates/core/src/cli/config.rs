//! Flat `section.key = value` experiment configuration.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::datasets::TestSampling;
use crate::fedsim::ModelSpec;
use crate::optimizer::SelectionMode;
use crate::presets::{preset, HardwarePreset, PRESET_NAMES};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {msg}")]
    InvalidValue { line: usize, key: String, msg: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    Proposed,
    FixedPruning,
    FixedSelection,
    NoGen,
    FixedPower,
    FixedFrequency,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::Proposed,
        Scheme::FixedPruning,
        Scheme::FixedSelection,
        Scheme::NoGen,
        Scheme::FixedPower,
        Scheme::FixedFrequency,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::FixedPruning => "fixed-pruning",
            Scheme::FixedSelection => "fixed-selection",
            Scheme::NoGen => "no-gen",
            Scheme::FixedPower => "fixed-power",
            Scheme::FixedFrequency => "fixed-frequency",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Scheme::ALL.iter().map(Scheme::name).collect();
                format!("unknown scheme `{s}` (expected one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSpec {
    Synthetic {
        samples: usize,
        feature_dim: usize,
        classes: usize,
        separation: f64,
    },
    Idx {
        images: PathBuf,
        labels: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub preset: String,
    pub schemes: Vec<Scheme>,
    pub seeds: Vec<u64>,
    pub out: PathBuf,

    pub dataset: DatasetSpec,

    pub num_clients: usize,
    pub sigma: f64,
    pub train_fraction: f64,
    pub smoothing_eps: f64,
    pub test_sampling: TestSampling,

    pub hardware: HardwarePreset,
    pub noise_psd_client: Option<f64>,

    pub lipschitz: f64,
    pub grad_sq: f64,
    pub model_sq: f64,
    /// `None` uses the initial training loss.
    pub loss_gap: Option<f64>,

    pub energy_budget: f64,
    pub delay_budget: f64,

    pub rounds: usize,
    pub model: ModelSpec,

    pub selection: SelectionMode,
    pub max_outer: usize,
    pub outer_tol: f64,
    pub sca_max_iter: usize,
    pub sca_tol: f64,
    pub selection_max_iter: usize,
    pub normalize_phi: bool,
}

impl ExperimentConfig {
    pub fn from_preset(name: &str) -> Result<Self, ConfigError> {
        let hw = preset(name).ok_or_else(|| ConfigError::UnknownPreset(name.into()))?;
        Ok(Self {
            preset: name.into(),
            schemes: vec![Scheme::Proposed],
            seeds: vec![0],
            out: PathBuf::from("out"),
            dataset: DatasetSpec::Synthetic {
                samples: 2000,
                feature_dim: 20,
                classes: 10,
                separation: 6.0,
            },
            num_clients: 10,
            sigma: 5.0,
            train_fraction: 0.8,
            smoothing_eps: 0.5,
            test_sampling: TestSampling::Local,
            energy_budget: hw.energy_budget,
            delay_budget: hw.delay_budget,
            hardware: hw,
            noise_psd_client: None,
            lipschitz: 10.0,
            grad_sq: 100.0,
            model_sq: 50.0,
            loss_gap: None,
            rounds: 100,
            model: ModelSpec::Logistic,
            selection: SelectionMode::Auto,
            max_outer: 30,
            outer_tol: 1e-9,
            sca_max_iter: 50,
            sca_tol: 1e-6,
            selection_max_iter: 20,
            normalize_phi: false,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Parse config text. `experiment.preset` is applied first wherever it
    /// appears; every other key overrides the preset in file order.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((k, v)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    msg: format!("expected `section.key = value`, got `{body}`"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !k.contains('.') || k.split('.').any(str::is_empty) {
                return Err(ConfigError::Syntax { line, msg: format!("key `{k}` must be `section.key`") });
            }
            entries.push((line, k.to_string(), v.to_string()));
        }
        let preset_name = entries
            .iter()
            .rev()
            .find(|(_, k, _)| k == "experiment.preset")
            .map(|(_, _, v)| v.clone())
            .unwrap_or_else(|| PRESET_NAMES[0].to_string());
        let mut cfg = Self::from_preset(&preset_name)?;
        for (line, k, v) in &entries {
            cfg.set(*line, k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |msg: String| ConfigError::InvalidValue {
            line,
            key: key.to_string(),
            msg,
        };
        fn num<T: FromStr>(v: &str) -> Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("`{v}`: {e}"))
        }
        fn list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
        where
            T::Err: fmt::Display,
        {
            v.split(',').map(|s| num::<T>(s.trim())).collect()
        }
        fn flag(v: &str) -> Result<bool, String> {
            match v {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(format!("`{v}` is not true/false")),
            }
        }
        let hw = &mut self.hardware;
        let r: Result<(), String> = match key {
            "experiment.preset" => Ok(()),
            "experiment.schemes" => list::<Scheme>(value).map(|v| self.schemes = v),
            "experiment.seeds" => list::<u64>(value).map(|v| self.seeds = v),
            "experiment.out" => {
                self.out = PathBuf::from(value);
                Ok(())
            }
            "dataset.kind" => match value {
                "synthetic" => {
                    if !matches!(self.dataset, DatasetSpec::Synthetic { .. }) {
                        self.dataset = DatasetSpec::Synthetic {
                            samples: 2000,
                            feature_dim: 20,
                            classes: 10,
                            separation: 6.0,
                        };
                    }
                    Ok(())
                }
                "idx" => {
                    if !matches!(self.dataset, DatasetSpec::Idx { .. }) {
                        self.dataset = DatasetSpec::Idx {
                            images: PathBuf::new(),
                            labels: PathBuf::new(),
                        };
                    }
                    Ok(())
                }
                _ => Err(format!("`{value}` is not synthetic/idx")),
            },
            "dataset.samples" | "dataset.feature_dim" | "dataset.classes" | "dataset.separation" => {
                match &mut self.dataset {
                    DatasetSpec::Synthetic {
                        samples,
                        feature_dim,
                        classes,
                        separation,
                    } => match key {
                        "dataset.samples" => num(value).map(|v| *samples = v),
                        "dataset.feature_dim" => num(value).map(|v| *feature_dim = v),
                        "dataset.classes" => num(value).map(|v| *classes = v),
                        _ => num(value).map(|v| *separation = v),
                    },
                    DatasetSpec::Idx { .. } => Err("only valid for dataset.kind = synthetic".into()),
                }
            }
            "dataset.images" | "dataset.labels" => match &mut self.dataset {
                DatasetSpec::Idx { images, labels } => {
                    if key == "dataset.images" {
                        *images = PathBuf::from(value);
                    } else {
                        *labels = PathBuf::from(value);
                    }
                    Ok(())
                }
                DatasetSpec::Synthetic { .. } => Err("only valid for dataset.kind = idx".into()),
            },
            "partition.clients" => num(value).map(|v| self.num_clients = v),
            "partition.sigma" => num(value).map(|v| self.sigma = v),
            "partition.train_fraction" => num(value).map(|v| self.train_fraction = v),
            "partition.smoothing_eps" => num(value).map(|v| self.smoothing_eps = v),
            "partition.test_sampling" => match value {
                "local" => Ok(self.test_sampling = TestSampling::Local),
                "global" => Ok(self.test_sampling = TestSampling::Global),
                _ => Err(format!("`{value}` is not local/global")),
            },
            "hardware.gradient_bits" => num(value).map(|v| hw.gradient_bits = v),
            "hardware.flops_per_sample" => num(value).map(|v| hw.flops_per_sample = v),
            "hardware.uplink_bandwidth" => num(value).map(|v| hw.uplink_bandwidth = v),
            "hardware.lambda_max" => num(value).map(|v| hw.lambda_max = v),
            "hardware.f_max" => num(value).map(|v| hw.f_max = v),
            "hardware.p_max" => num(value).map(|v| hw.p_max = v),
            "hardware.flops_per_cycle" => num(value).map(|v| hw.flops_per_cycle = v),
            "hardware.pue" => num(value).map(|v| hw.pue = v),
            "hardware.switch_caps" => list(value).map(|v| hw.switch_caps = v),
            "hardware.batch_size" => num(value).map(|v| hw.batch_size = v),
            "channel.path_loss" => num(value).map(|v| hw.path_loss = v),
            "channel.noise_psd" => num(value).map(|v| hw.noise_psd = v),
            "channel.client_noise_psd" => num(value).map(|v| self.noise_psd_client = Some(v)),
            "channel.downlink_bandwidth" => num(value).map(|v| hw.downlink_bandwidth = v),
            "channel.server_power" => num(value).map(|v| hw.server_power = v),
            "bound.lipschitz" => num(value).map(|v| self.lipschitz = v),
            "bound.grad_sq" => num(value).map(|v| self.grad_sq = v),
            "bound.model_sq" => num(value).map(|v| self.model_sq = v),
            "bound.loss_gap" => {
                if value == "auto" {
                    self.loss_gap = None;
                    Ok(())
                } else {
                    num(value).map(|v| self.loss_gap = Some(v))
                }
            }
            "budget.energy" => num(value).map(|v| self.energy_budget = v),
            "budget.delay" => num(value).map(|v| self.delay_budget = v),
            "train.learning_rate" => num(value).map(|v| hw.learning_rate = v),
            "train.rounds" => num(value).map(|v| self.rounds = v),
            "train.model" => match value {
                "logistic" => Ok(self.model = ModelSpec::Logistic),
                "mlp" => {
                    if !matches!(self.model, ModelSpec::Mlp { .. }) {
                        self.model = ModelSpec::Mlp { hidden: 32 };
                    }
                    Ok(())
                }
                _ => Err(format!("`{value}` is not logistic/mlp")),
            },
            "train.hidden" => match &mut self.model {
                ModelSpec::Mlp { hidden } => num(value).map(|v| *hidden = v),
                ModelSpec::Logistic => Err("only valid for train.model = mlp".into()),
            },
            "optimizer.selection" => match value {
                "auto" => Ok(self.selection = SelectionMode::Auto),
                "exhaustive" => Ok(self.selection = SelectionMode::Exhaustive),
                "greedy" => Ok(self.selection = SelectionMode::Greedy),
                _ => Err(format!("`{value}` is not auto/exhaustive/greedy")),
            },
            "optimizer.max_outer" => num(value).map(|v| self.max_outer = v),
            "optimizer.outer_tol" => num(value).map(|v| self.outer_tol = v),
            "optimizer.sca_max_iter" => num(value).map(|v| self.sca_max_iter = v),
            "optimizer.sca_tol" => num(value).map(|v| self.sca_tol = v),
            "optimizer.selection_max_iter" => num(value).map(|v| self.selection_max_iter = v),
            "optimizer.normalize_phi" => flag(value).map(|v| self.normalize_phi = v),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                })
            }
        };
        r.map_err(bad)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.schemes.is_empty() {
            return fail("experiment.schemes is empty");
        }
        if self.seeds.is_empty() {
            return fail("experiment.seeds is empty");
        }
        if self.rounds == 0 {
            return fail("train.rounds must be >= 1");
        }
        if self.num_clients == 0 {
            return fail("partition.clients must be >= 1");
        }
        if self.hardware.switch_caps.is_empty() {
            return fail("hardware.switch_caps is empty");
        }
        if !(self.energy_budget > 0.0 && self.delay_budget > 0.0) {
            return fail("budgets must be positive");
        }
        if let DatasetSpec::Idx { images, labels } = &self.dataset {
            if images.as_os_str().is_empty() || labels.as_os_str().is_empty() {
                return fail("dataset.images and dataset.labels are required for idx data");
            }
        }
        Ok(())
    }

    /// Serialize every key; `parse(render())` reproduces the config.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let join = |v: Vec<String>| v.join(",");
        let hw = &self.hardware;
        put("experiment.preset", self.preset.clone());
        put("experiment.schemes", join(self.schemes.iter().map(|s| s.to_string()).collect()));
        put("experiment.seeds", join(self.seeds.iter().map(|s| s.to_string()).collect()));
        put("experiment.out", self.out.display().to_string());
        match &self.dataset {
            DatasetSpec::Synthetic {
                samples,
                feature_dim,
                classes,
                separation,
            } => {
                put("dataset.kind", "synthetic".into());
                put("dataset.samples", samples.to_string());
                put("dataset.feature_dim", feature_dim.to_string());
                put("dataset.classes", classes.to_string());
                put("dataset.separation", format!("{separation:?}"));
            }
            DatasetSpec::Idx { images, labels } => {
                put("dataset.kind", "idx".into());
                put("dataset.images", images.display().to_string());
                put("dataset.labels", labels.display().to_string());
            }
        }
        put("partition.clients", self.num_clients.to_string());
        put("partition.sigma", format!("{:?}", self.sigma));
        put("partition.train_fraction", format!("{:?}", self.train_fraction));
        put("partition.smoothing_eps", format!("{:?}", self.smoothing_eps));
        put(
            "partition.test_sampling",
            match self.test_sampling {
                TestSampling::Local => "local",
                TestSampling::Global => "global",
            }
            .into(),
        );
        put("hardware.gradient_bits", format!("{:?}", hw.gradient_bits));
        put("hardware.flops_per_sample", format!("{:?}", hw.flops_per_sample));
        put("hardware.uplink_bandwidth", format!("{:?}", hw.uplink_bandwidth));
        put("hardware.lambda_max", format!("{:?}", hw.lambda_max));
        put("hardware.f_max", format!("{:?}", hw.f_max));
        put("hardware.p_max", format!("{:?}", hw.p_max));
        put("hardware.flops_per_cycle", format!("{:?}", hw.flops_per_cycle));
        put("hardware.pue", format!("{:?}", hw.pue));
        put("hardware.switch_caps", join(hw.switch_caps.iter().map(|v| format!("{v:?}")).collect()));
        put("hardware.batch_size", hw.batch_size.to_string());
        put("channel.path_loss", format!("{:?}", hw.path_loss));
        put("channel.noise_psd", format!("{:?}", hw.noise_psd));
        if let Some(v) = self.noise_psd_client {
            put("channel.client_noise_psd", format!("{v:?}"));
        }
        put("channel.downlink_bandwidth", format!("{:?}", hw.downlink_bandwidth));
        put("channel.server_power", format!("{:?}", hw.server_power));
        put("bound.lipschitz", format!("{:?}", self.lipschitz));
        put("bound.grad_sq", format!("{:?}", self.grad_sq));
        put("bound.model_sq", format!("{:?}", self.model_sq));
        put("bound.loss_gap", self.loss_gap.map_or("auto".into(), |v| format!("{v:?}")));
        put("budget.energy", format!("{:?}", self.energy_budget));
        put("budget.delay", format!("{:?}", self.delay_budget));
        put("train.learning_rate", format!("{:?}", hw.learning_rate));
        put("train.rounds", self.rounds.to_string());
        match self.model {
            ModelSpec::Logistic => put("train.model", "logistic".into()),
            ModelSpec::Mlp { hidden } => {
                put("train.model", "mlp".into());
                put("train.hidden", hidden.to_string());
            }
        }
        put(
            "optimizer.selection",
            match self.selection {
                SelectionMode::Auto => "auto",
                SelectionMode::Exhaustive => "exhaustive",
                SelectionMode::Greedy => "greedy",
            }
            .into(),
        );
        put("optimizer.max_outer", self.max_outer.to_string());
        put("optimizer.outer_tol", format!("{:?}", self.outer_tol));
        put("optimizer.sca_max_iter", self.sca_max_iter.to_string());
        put("optimizer.sca_tol", format!("{:?}", self.sca_tol));
        put("optimizer.selection_max_iter", self.selection_max_iter.to_string());
        put("optimizer.normalize_phi", self.normalize_phi.to_string());
        out
    }
}
