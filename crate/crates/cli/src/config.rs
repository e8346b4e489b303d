//! Flat `key = value` run configuration.
//!
//! Values are resolved in three layers: built-in defaults, then an optional
//! config file, then command-line flags. Every output manifest echoes the
//! resolved values.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dlmbir_core::data_sim::{HuWindow, DEFAULT_HU_WINDOW};
use dlmbir_core::network::{NetworkVariant, VariantKind, DEFAULT_DEPTH, DEFAULT_WIDTH};
use dlmbir_core::tensor::Precision;
use dlmbir_core::trainer::{ShardBn, TrainingConfig};

use crate::error::{as_mismatch, CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub out: PathBuf,
    pub data: Option<PathBuf>,

    pub dims: [usize; 3],
    pub volumes: usize,
    pub views: usize,
    pub noise_sigma: f64,
    pub hu_window: HuWindow,

    pub variant: VariantKind,
    pub window: Option<usize>,
    pub depth: usize,
    pub width: usize,
    pub precision: Precision,

    pub patch_size: usize,
    pub patches: usize,
    pub augment: bool,
    pub train_volumes: Option<Vec<usize>>,

    pub epochs: usize,
    pub batch_size: usize,
    pub shards: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub val_fraction: f64,
    pub shard_bn: ShardBn,
    pub checkpoint_every: usize,

    pub plots: bool,
    pub plot_width: usize,
    pub plot_height: usize,
    pub repeats: usize,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainingConfig::default();
        Config {
            seed: 0,
            out: PathBuf::from("out"),
            data: None,
            dims: [16, 64, 64],
            volumes: 3,
            views: 24,
            noise_sigma: 2.0,
            hu_window: DEFAULT_HU_WINDOW,
            variant: VariantKind::TwoD,
            window: None,
            depth: DEFAULT_DEPTH,
            width: DEFAULT_WIDTH,
            precision: Precision::F32,
            patch_size: 30,
            patches: 50_000,
            augment: true,
            train_volumes: None,
            epochs: t.epochs,
            batch_size: t.batch_size,
            shards: t.shards,
            learning_rate: t.learning_rate,
            adam_beta1: t.adam_beta1,
            adam_beta2: t.adam_beta2,
            adam_epsilon: t.adam_epsilon,
            val_fraction: t.val_fraction,
            shard_bn: t.shard_bn,
            checkpoint_every: 0,
            plots: false,
            plot_width: 640,
            plot_height: 360,
            repeats: 3,
        }
    }
}

fn parse<V: FromStr>(key: &str, value: &str) -> Result<V, String> {
    value.trim().parse().map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn parse_list<V: FromStr>(key: &str, value: &str) -> Result<Vec<V>, String> {
    value
        .split(|c: char| c.is_whitespace() || c == ',' || c == 'x')
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(format!("invalid boolean `{value}` for `{key}`")),
    }
}

pub const KEYS: &[&str] = &[
    "seed", "out", "data", "dims", "volumes", "views", "noise_sigma", "hu_window", "variant", "window",
    "depth", "width", "precision", "patch_size", "patches", "augment", "train_volumes", "epochs",
    "batch_size", "shards", "learning_rate", "adam_beta1", "adam_beta2", "adam_epsilon", "val_fraction",
    "shard_bn", "checkpoint_every", "plots", "plot_width", "plot_height", "repeats",
];

impl Config {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "data" => self.data = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dims" => {
                let d: Vec<usize> = parse_list(key, v)?;
                self.dims = d.try_into().map_err(|_| format!("`dims` needs three values, got `{v}`"))?;
            }
            "volumes" => self.volumes = parse(key, v)?,
            "views" => self.views = parse(key, v)?,
            "noise_sigma" => self.noise_sigma = parse(key, v)?,
            "hu_window" => {
                let w: Vec<f64> = parse_list(key, v)?;
                let [lo, hi]: [f64; 2] = w.try_into().map_err(|_| format!("`hu_window` needs lo and hi, got `{v}`"))?;
                self.hu_window = HuWindow::new(lo, hi).map_err(|e| e.to_string())?;
            }
            "variant" => self.variant = v.parse().map_err(|e: dlmbir_core::Error| e.to_string())?,
            "window" => self.window = if v.is_empty() || v == "auto" { None } else { Some(parse(key, v)?) },
            "depth" => self.depth = parse(key, v)?,
            "width" => self.width = parse(key, v)?,
            "precision" => self.precision = v.parse()?,
            "patch_size" => self.patch_size = parse(key, v)?,
            "patches" => self.patches = parse(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "train_volumes" => {
                self.train_volumes = if v.is_empty() || v == "auto" { None } else { Some(parse_list(key, v)?) }
            }
            "epochs" => self.epochs = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "shards" => self.shards = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "adam_beta1" => self.adam_beta1 = parse(key, v)?,
            "adam_beta2" => self.adam_beta2 = parse(key, v)?,
            "adam_epsilon" => self.adam_epsilon = parse(key, v)?,
            "val_fraction" => self.val_fraction = parse(key, v)?,
            "shard_bn" => self.shard_bn = v.parse().map_err(|e: dlmbir_core::Error| e.to_string())?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "plots" => self.plots = parse_bool(key, v)?,
            "plot_width" => self.plot_width = parse(key, v)?,
            "plot_height" => self.plot_height = parse(key, v)?,
            "repeats" => self.repeats = parse(key, v)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Applies a config file. All unknown keys are reported together.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        let mut unknown = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::Failure(format!("{origin}:{}: expected `key = value`, got `{raw}`", n + 1))
            })?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                unknown.push(k.to_string());
                continue;
            }
            self.set(k, v).map_err(|e| CliError::Failure(format!("{origin}:{}: {e}", n + 1)))?;
        }
        if !unknown.is_empty() {
            return Err(CliError::Failure(format!("{origin}: unknown config keys: {}", unknown.join(", "))));
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> CliResult<()> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            let msg = format!("config file {}: {e}", path.display());
            if e.kind() == std::io::ErrorKind::NotFound {
                CliError::MissingInput(msg)
            } else {
                CliError::Failure(msg)
            }
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Defaults, then `file`, then `overrides` (flag values by config key).
    pub fn resolve(file: Option<&Path>, overrides: &[(&str, String)]) -> CliResult<Self> {
        let mut c = Config::default();
        if let Some(f) = file {
            c.apply_file(f)?;
        }
        for (k, v) in overrides {
            c.set(k, v).map_err(|e| CliError::Failure(format!("--{}: {e}", k.replace('_', "-"))))?;
        }
        Ok(c)
    }

    /// Effective values in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        KEYS.iter()
            .map(|&k| {
                let v = match k {
                    "seed" => self.seed.to_string(),
                    "out" => self.out.display().to_string(),
                    "data" => self.data.as_ref().map(|d| d.display().to_string()).unwrap_or_default(),
                    "dims" => list(&self.dims),
                    "volumes" => self.volumes.to_string(),
                    "views" => self.views.to_string(),
                    "noise_sigma" => self.noise_sigma.to_string(),
                    "hu_window" => format!("{} {}", self.hu_window.lo, self.hu_window.hi),
                    "variant" => self.variant.to_string(),
                    "window" => self.window.map(|w| w.to_string()).unwrap_or_else(|| "auto".into()),
                    "depth" => self.depth.to_string(),
                    "width" => self.width.to_string(),
                    "precision" => self.precision.to_string(),
                    "patch_size" => self.patch_size.to_string(),
                    "patches" => self.patches.to_string(),
                    "augment" => self.augment.to_string(),
                    "train_volumes" => self.train_volumes.as_deref().map(list).unwrap_or_else(|| "auto".into()),
                    "epochs" => self.epochs.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "shards" => self.shards.to_string(),
                    "learning_rate" => self.learning_rate.to_string(),
                    "adam_beta1" => self.adam_beta1.to_string(),
                    "adam_beta2" => self.adam_beta2.to_string(),
                    "adam_epsilon" => self.adam_epsilon.to_string(),
                    "val_fraction" => self.val_fraction.to_string(),
                    "shard_bn" => self.shard_bn.to_string(),
                    "checkpoint_every" => self.checkpoint_every.to_string(),
                    "plots" => self.plots.to_string(),
                    "plot_width" => self.plot_width.to_string(),
                    "plot_height" => self.plot_height.to_string(),
                    "repeats" => self.repeats.to_string(),
                    _ => unreachable!("every key is rendered"),
                };
                (k, v)
            })
            .collect()
    }

    /// `key = value` lines of the effective configuration.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.pairs() {
            writeln!(s, "{k} = {v}").expect("write to string");
        }
        s
    }

    /// Validated network variant; inconsistent variant/window is a mismatch.
    pub fn network_variant(&self) -> CliResult<NetworkVariant> {
        let mut v = NetworkVariant::of_kind(self.variant, self.window).with_size(self.depth, self.width);
        if let Some(w) = self.window {
            v.window = w;
        }
        v.validate().map_err(as_mismatch)?;
        Ok(v)
    }

    pub fn training_config(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_epsilon: self.adam_epsilon,
            batch_size: self.batch_size,
            shards: self.shards,
            epochs: self.epochs,
            seed: self.seed,
            val_fraction: self.val_fraction,
            shard_bn: self.shard_bn,
            checkpoint_every: self.checkpoint_every,
            hu_window: self.hu_window,
        }
    }
}
