//! Run configuration: JSON config files, flag overrides, and presets.
//!
//! Every setting can come from three places, in ascending precedence:
//! a named preset, a JSON config file, and command-line flags. The fully
//! merged result is a [`RunConfig`], which each command echoes to its
//! output directory as `config.json` so runs stay self-describing.

use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use eth_core::eval::FilterSetting;
use eth_core::model::{Ablation, EthConfig};
use eth_core::train::TrainConfig;
use eth_core::{EthError, Result};

/// Environment variable naming a directory that dataset paths are
/// resolved against when they do not exist as given.
pub const DATA_DIR_ENV: &str = "ETH_DATA_DIR";

/// History length(s): a single value, an explicit list, or a comma
/// string — all three spellings are accepted in config files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MSpec {
    One(usize),
    Many(Vec<usize>),
    Text(String),
}

impl MSpec {
    /// Flattens to a duplicate-free list, preserving order.
    pub fn to_grid(&self) -> Result<Vec<usize>> {
        let raw: Vec<usize> = match self {
            MSpec::One(m) => vec![*m],
            MSpec::Many(ms) => ms.clone(),
            MSpec::Text(s) => s
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| {
                        EthError::invalid(format!(
                            "history length list `{s}`: `{tok}` is not a positive integer"
                        ))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let mut grid = Vec::new();
        for m in raw {
            if m == 0 {
                return Err(EthError::invalid("history length m must be at least 1"));
            }
            if !grid.contains(&m) {
                grid.push(m);
            }
        }
        if grid.is_empty() {
            return Err(EthError::invalid("history length list is empty"));
        }
        Ok(grid)
    }
}

/// One optional value per setting. `None` means "not specified at this
/// layer"; [`Settings::or`] fills the gaps from a lower-precedence layer.
///
/// This is also the schema of the JSON config file: every key mirrors the
/// flag of the same name, and unknown keys are rejected.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub stat: Option<PathBuf>,
    pub synthetic: Option<String>,
    pub preset: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub d: Option<usize>,
    pub w: Option<usize>,
    pub layers: Option<usize>,
    pub m: Option<MSpec>,
    pub gamma: Option<String>,
    pub beta_mode: Option<String>,
    pub loss: Option<String>,
    pub ablate: Option<String>,
    pub filter: Option<String>,
    pub lr: Option<f64>,
    pub epochs: Option<usize>,
    pub patience: Option<usize>,
    pub grad_clip: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

macro_rules! merge_fields {
    ($self:ident, $fallback:ident; $($field:ident),* $(,)?) => {
        Settings { $($field: $self.$field.or($fallback.$field)),* }
    };
}

impl Settings {
    /// Field-by-field merge; values in `self` win.
    pub fn or(self, fallback: Settings) -> Settings {
        merge_fields!(
            self, fallback;
            train, valid, test, stat, synthetic, preset, checkpoint,
            d, w, layers, m, gamma, beta_mode, loss, ablate, filter,
            lr, epochs, patience, grad_clip, seed, out,
        )
    }

    /// Reads a JSON config file; errors name the file.
    pub fn from_file(path: &Path) -> Result<Settings> {
        let text = fs::read_to_string(path).map_err(|e| {
            EthError::invalid(format!("config file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| EthError::invalid(format!("config file {}: {e}", path.display())))
    }
}

/// Published hyperparameter defaults for the four benchmark datasets.
pub fn preset(name: &str) -> Result<Settings> {
    let (layers, m, gamma) = match name {
        "icews14" => (2, 10, "relu"),
        "icews0515" => (2, 24, "identity"),
        "yago" => (1, 2, "relu"),
        "wiki" => (1, 2, "relu"),
        other => {
            return Err(EthError::invalid(format!(
                "unknown preset `{other}` (expected icews14, icews0515, yago, or wiki)"
            )))
        }
    };
    Ok(Settings {
        d: Some(200),
        w: Some(200),
        layers: Some(layers),
        m: Some(MSpec::One(m)),
        gamma: Some(gamma.to_string()),
        ..Settings::default()
    })
}

/// Where the facts come from: three split files plus a stat file, or a
/// deterministic synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSpec {
    Files {
        train: PathBuf,
        valid: PathBuf,
        test: PathBuf,
        stat: PathBuf,
    },
    Synthetic {
        n_entities: usize,
        n_relations: usize,
        n_times: usize,
        shift_rule: usize,
    },
}

/// Parses `cycle` or `cycle:<entities>,<relations>,<times>,<shift>`.
pub fn parse_synth_spec(spec: &str) -> Result<DatasetSpec> {
    let (family, args) = match spec.split_once(':') {
        Some((f, a)) => (f, Some(a)),
        None => (spec, None),
    };
    if family != "cycle" {
        return Err(EthError::invalid(format!(
            "unknown synthetic family `{family}` \
             (expected cycle[:entities,relations,times,shift])"
        )));
    }
    let (n_entities, n_relations, n_times, shift_rule) = match args {
        None => (20, 4, 60, 2),
        Some(a) => {
            let nums: Vec<usize> = a
                .split(',')
                .map(|tok| {
                    tok.trim().parse::<usize>().map_err(|_| {
                        EthError::invalid(format!(
                            "synthetic spec `{spec}`: `{tok}` is not a positive integer"
                        ))
                    })
                })
                .collect::<Result<_>>()?;
            if nums.len() != 4 {
                return Err(EthError::invalid(format!(
                    "synthetic spec `{spec}` needs exactly 4 numbers \
                     (entities,relations,times,shift), got {}",
                    nums.len()
                )));
            }
            (nums[0], nums[1], nums[2], nums[3])
        }
    };
    Ok(DatasetSpec::Synthetic {
        n_entities,
        n_relations,
        n_times,
        shift_rule,
    })
}

/// Returns `path` if it exists; otherwise, for relative paths, retries
/// under `$ETH_DATA_DIR`. Paths that exist nowhere come back unchanged so
/// downstream errors name what the user typed.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.exists() {
        return path.to_path_buf();
    }
    if path.is_relative() {
        if let Some(root) = env::var_os(DATA_DIR_ENV) {
            let candidate = Path::new(&root).join(path);
            if candidate.exists() {
                return candidate;
            }
        }
    }
    path.to_path_buf()
}

/// Fully merged, validated settings for one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    /// Architecture with `m` set to the first grid entry; per-run copies
    /// override `m` during a grid search.
    pub model: EthConfig,
    /// History lengths to try; more than one makes `train` a grid search.
    pub m_grid: Vec<usize>,
    pub train: TrainConfig,
    pub seed: u64,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    /// Ablation switches; `train` applies them, `ablate` compares them.
    pub ablate: Vec<Ablation>,
    pub filter: FilterSetting,
    /// What was actually asked for (flags/file/preset merged), before
    /// defaults filled the gaps — lets checkpoint consumers distinguish
    /// "user demanded d=64" from "d defaulted".
    #[serde(skip)]
    pub requested: Settings,
}

impl RunConfig {
    /// Merges flags over an optional config file over an optional preset,
    /// then validates and resolves everything.
    pub fn resolve(flags: Settings, config_file: Option<&Path>) -> Result<RunConfig> {
        let file = match config_file {
            Some(p) => Settings::from_file(p)?,
            None => Settings::default(),
        };
        let merged = flags.or(file);
        let base = match &merged.preset {
            Some(name) => preset(name)?,
            None => Settings::default(),
        };
        let s = merged.or(base);

        let mut model = EthConfig::default();
        if let Some(d) = s.d {
            model.d = d;
        }
        if let Some(w) = s.w {
            model.w = w;
        }
        if let Some(layers) = s.layers {
            model.layers = layers;
        }
        if let Some(gamma) = &s.gamma {
            model.gamma_kind = gamma.parse()?;
        }
        if let Some(mode) = &s.beta_mode {
            model.beta_mode = mode.parse()?;
        }
        if let Some(loss) = &s.loss {
            model.loss_kind = loss.parse()?;
        }
        let m_grid = match &s.m {
            Some(spec) => spec.to_grid()?,
            None => vec![model.m],
        };
        model.m = m_grid[0];
        model.validate()?;

        let seed = s.seed.unwrap_or(0);
        let mut train = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        if let Some(lr) = s.lr {
            train.lr = lr;
        }
        if let Some(epochs) = s.epochs {
            train.max_epochs = epochs;
        }
        if let Some(patience) = s.patience {
            train.patience = patience;
        }
        if let Some(clip) = s.grad_clip {
            if clip < 0.0 || !clip.is_finite() {
                return Err(EthError::invalid(format!(
                    "gradient clip must be a finite non-negative number \
                     (0 disables), got {clip}"
                )));
            }
            train.grad_clip_norm = if clip == 0.0 { None } else { Some(clip) };
        }
        train.validate()?;

        let dataset = match (&s.synthetic, &s.train, &s.valid, &s.test, &s.stat) {
            (Some(spec), None, None, None, None) => parse_synth_spec(spec)?,
            (Some(_), ..) => {
                return Err(EthError::invalid(
                    "--synthetic and dataset file flags are mutually exclusive",
                ))
            }
            (None, Some(train), Some(valid), Some(test), Some(stat)) => DatasetSpec::Files {
                train: resolve_data_path(train),
                valid: resolve_data_path(valid),
                test: resolve_data_path(test),
                stat: resolve_data_path(stat),
            },
            (None, ..) => {
                return Err(EthError::invalid(
                    "no dataset: give --synthetic, or all of --train/--valid/--test/--stat",
                ))
            }
        };

        let mut ablate = Vec::new();
        if let Some(list) = &s.ablate {
            for tok in list.split(',') {
                let tok = tok.trim();
                if tok.is_empty() {
                    continue;
                }
                let mode: Ablation = tok.parse()?;
                if !ablate.contains(&mode) {
                    ablate.push(mode);
                }
            }
            if ablate.is_empty() {
                return Err(EthError::invalid(
                    "ablation list is empty (expected modes like se, q, beta0)",
                ));
            }
        }

        let filter = match &s.filter {
            Some(f) => f.parse()?,
            None => FilterSetting::Time,
        };

        Ok(RunConfig {
            dataset,
            model,
            m_grid,
            train,
            seed,
            out: s.out.clone().unwrap_or_else(|| PathBuf::from("eth-out")),
            checkpoint: s.checkpoint.clone(),
            ablate,
            filter,
            requested: s,
        })
    }

    /// Serializes the effective configuration to `dir/config.json`.
    pub fn echo_to(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir)?;
        let path = dir.join("config.json");
        let mut text = serde_json::to_string_pretty(self)
            .map_err(|e| EthError::invalid(format!("config serialization: {e}")))?;
        text.push('\n');
        fs::write(&path, text)?;
        Ok(path)
    }
}
