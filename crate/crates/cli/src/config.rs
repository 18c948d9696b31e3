//! Flat `key = value` configuration in `[section]` blocks.
//!
//! Every accepted key is listed in [`KEYS`] with its default; anything else
//! is rejected. The effective configuration (defaults, file, then command
//! line overrides) is written back out in the same format.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use pansharp::imaging::SensorSpec;
use pansharp::metrics::MetricOptions;
use pansharp::model::{GainMode, TdnetConfig, UpsampleMode, Variant};
use pansharp::trainer::TrainConfig;

use crate::CliError;

pub const EFFECTIVE_CONFIG_FILE: &str = "effective_config.ini";

/// `(section, key, default)`; an empty default means "unset".
pub const KEYS: &[(&str, &str, &str)] = &[
    ("sensor", "preset", "wv3"),
    ("sensor", "preview_bands", "auto"),
    ("dataset", "ms", ""),
    ("dataset", "pan", ""),
    ("dataset", "demo_size", "512"),
    ("dataset", "patch", "64"),
    ("dataset", "stride", "64"),
    ("dataset", "train_ratio", "0.7"),
    ("dataset", "val_ratio", "0.2"),
    ("dataset", "test_ratio", "0.1"),
    ("dataset", "seed", "2024"),
    ("model", "variant", "TDNet"),
    ("model", "feature_width", "64"),
    ("model", "pan_kernel", "5"),
    ("model", "mscb_kernels", "3,5,7"),
    ("model", "mscb_width", "20"),
    ("model", "upsample", "pixel-shuffle"),
    ("model", "mrab", "true"),
    ("model", "pan_branch", "true"),
    ("model", "levels", "2"),
    ("model", "gain", "attention"),
    ("model", "pan_gain", "0.15"),
    ("train", "epochs", "300"),
    ("train", "batch_size", "32"),
    ("train", "lr_schedule", "step-1e-3"),
    ("train", "gamma", "0.4"),
    ("train", "beta1", "0.9"),
    ("train", "beta2", "0.999"),
    ("train", "weight_decay", "0"),
    ("train", "seed", "2024"),
    ("train", "checkpoint_every", ""),
    ("metric", "window", "32"),
    ("metric", "p", "1"),
    ("metric", "q", "1"),
    ("metric", "alpha", "1"),
    ("metric", "beta", "1"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn known(section: &str, key: &str) -> bool {
    KEYS.iter().any(|&(s, k, _)| s == section && k == key)
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            values: KEYS
                .iter()
                .map(|&(s, k, d)| ((s.to_string(), k.to_string()), d.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut section: Option<String> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !KEYS.iter().any(|&(s, _, _)| s == name) {
                    return Err(config_err(format!("line {}: unknown section [{name}]", no + 1)));
                }
                section = Some(name.to_string());
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", no + 1)))?;
            let sec = section
                .as_deref()
                .ok_or_else(|| config_err(format!("line {}: key outside a [section]", no + 1)))?;
            cfg.set(sec, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        if !known(section, key) {
            return Err(config_err(format!("unknown key {section}.{key}")));
        }
        self.values
            .insert((section.to_string(), key.to_string()), value.to_string());
        Ok(())
    }

    /// Applies one `section.key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<(), CliError> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| config_err(format!("override '{spec}' is not section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| config_err(format!("override key '{path}' is not section.key")))?;
        self.set(section, key, value.trim())
    }

    pub fn get(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(String::as_str)
            .unwrap_or_else(|| panic!("{section}.{key} is not a known key"))
    }

    fn typed<T: FromStr>(&self, section: &str, key: &str) -> Result<T, CliError> {
        let raw = self.get(section, key);
        raw.parse()
            .map_err(|_| config_err(format!("{section}.{key}: cannot parse '{raw}'")))
    }

    fn optional_path(&self, section: &str, key: &str) -> Option<PathBuf> {
        let raw = self.get(section, key);
        (!raw.is_empty()).then(|| PathBuf::from(raw))
    }

    fn list(&self, section: &str, key: &str) -> Result<Vec<usize>, CliError> {
        self.get(section, key)
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| config_err(format!("{section}.{key}: bad list entry '{p}'")))
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(section, key, _) in KEYS {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                writeln!(out, "[{section}]").unwrap();
                current = section;
            }
            writeln!(out, "{key} = {}", self.get(section, key)).unwrap();
        }
        out
    }

    pub fn echo(&self, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(pansharp::Error::from)?;
        std::fs::write(dir.join(EFFECTIVE_CONFIG_FILE), self.to_text()).map_err(pansharp::Error::from)?;
        Ok(())
    }

    pub fn sensor(&self) -> Result<SensorSpec, CliError> {
        SensorSpec::preset(self.get("sensor", "preset")).map_err(CliError::from)
    }

    /// Three 0-based band indices for the colour preview.
    pub fn preview_bands(&self, bands: usize) -> Result<[usize; 3], CliError> {
        let picked = match self.get("sensor", "preview_bands") {
            "auto" if bands >= 8 => vec![4, 2, 1],
            "auto" if bands >= 3 => vec![2, 1, 0],
            "auto" => vec![0; 3],
            _ => self.list("sensor", "preview_bands")?,
        };
        match picked.as_slice() {
            &[r, g, b] if r < bands && g < bands && b < bands => Ok([r, g, b]),
            other => Err(config_err(format!("preview bands {other:?} invalid for {bands} bands"))),
        }
    }

    pub fn ms_path(&self) -> Option<PathBuf> {
        self.optional_path("dataset", "ms")
    }

    pub fn pan_path(&self) -> Option<PathBuf> {
        self.optional_path("dataset", "pan")
    }

    pub fn demo_size(&self) -> Result<usize, CliError> {
        self.typed("dataset", "demo_size")
    }

    pub fn patch(&self) -> Result<(usize, usize), CliError> {
        Ok((self.typed("dataset", "patch")?, self.typed("dataset", "stride")?))
    }

    pub fn split_ratios(&self) -> Result<(f64, f64, f64), CliError> {
        let r: (f64, f64, f64) = (
            self.typed("dataset", "train_ratio")?,
            self.typed("dataset", "val_ratio")?,
            self.typed("dataset", "test_ratio")?,
        );
        if r.0 < 0.0 || r.1 < 0.0 || r.2 < 0.0 || (r.0 + r.1 + r.2 - 1.0).abs() > 1e-9 {
            return Err(config_err(format!(
                "dataset split ratios {r:?} must be non-negative and sum to 1"
            )));
        }
        Ok(r)
    }

    pub fn dataset_seed(&self) -> Result<u64, CliError> {
        self.typed("dataset", "seed")
    }

    /// Network configuration for `bands` bands with the variant applied last.
    pub fn model(&self, bands: usize, ratio: usize) -> Result<TdnetConfig, CliError> {
        let base = TdnetConfig {
            bands,
            ratio,
            feature_width: self.typed("model", "feature_width")?,
            pan_kernel: self.typed("model", "pan_kernel")?,
            mscb_kernels: self.list("model", "mscb_kernels")?,
            mscb_width: self.typed("model", "mscb_width")?,
            upsample_mode: UpsampleMode::from_str(self.get("model", "upsample"))?,
            use_mrab: self.typed("model", "mrab")?,
            use_pan_branch: self.typed("model", "pan_branch")?,
            levels: self.typed("model", "levels")?,
            gain_mode: GainMode::from_str(self.get("model", "gain"))?,
            pan_gain: self.typed("model", "pan_gain")?,
        };
        let config = Variant::from_str(self.get("model", "variant"))?.apply(&base);
        config.validate()?;
        Ok(config)
    }

    pub fn train(&self) -> Result<TrainConfig, CliError> {
        let schedule = self.get("train", "lr_schedule");
        let lr_schedule = match TrainConfig::schedule_preset(schedule) {
            Ok(s) => s,
            Err(_) => parse_schedule(schedule)?,
        };
        let checkpoint_every = match self.get("train", "checkpoint_every") {
            "" | "none" => None,
            _ => Some(self.typed("train", "checkpoint_every")?),
        };
        let cfg = TrainConfig {
            epochs: self.typed("train", "epochs")?,
            batch_size: self.typed("train", "batch_size")?,
            lr_schedule,
            gamma: self.typed("train", "gamma")?,
            betas: (self.typed("train", "beta1")?, self.typed("train", "beta2")?),
            weight_decay: self.typed("train", "weight_decay")?,
            seed: self.typed("train", "seed")?,
            checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metric(&self) -> Result<MetricOptions, CliError> {
        Ok(MetricOptions {
            window: self.typed("metric", "window")?,
            p: self.typed("metric", "p")?,
            q: self.typed("metric", "q")?,
            alpha: self.typed("metric", "alpha")?,
            beta: self.typed("metric", "beta")?,
        })
    }
}

/// `epoch:lr` pairs separated by commas, e.g. `0:1e-3,220:1e-4`.
fn parse_schedule(text: &str) -> Result<Vec<(usize, f32)>, CliError> {
    text.split(',')
        .map(|item| {
            let (e, lr) = item
                .split_once(':')
                .ok_or_else(|| config_err(format!("lr_schedule entry '{item}' is not epoch:lr")))?;
            let e = e
                .trim()
                .parse()
                .map_err(|_| config_err(format!("bad epoch in '{item}'")))?;
            let lr = lr
                .trim()
                .parse()
                .map_err(|_| config_err(format!("bad learning rate in '{item}'")))?;
            Ok((e, lr))
        })
        .collect()
}
