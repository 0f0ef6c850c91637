//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are
//! comma-separated, optional values accept `none`. Relative paths resolve
//! against the directory of the config file. The `model` key is applied
//! first because it selects the architecture defaults the other keys override.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::dataset::{Camera, ColumnMap, IndexOptions, SequenceOptions};
use crate::error::{Error, Result};
use crate::imaging::{AugmentPolicy, FlowParams};
use crate::model::{ModelConfig, ModelKind};
use crate::training::TrainConfig;

/// Every accepted key, in the order the resolved config is written.
pub const KEYS: &[&str] = &[
    "model",
    "seq_len",
    "feature_dim",
    "heads",
    "encoder_layers",
    "fused_dim",
    "ff_dim",
    "lstm_hidden",
    "lstm_layers",
    "backbone_channels",
    "stem_kernel",
    "stem_stride",
    "input_h",
    "input_w",
    "predict_speed",
    "positional_encoding",
    "lr",
    "decay_epochs",
    "decay_factor",
    "epochs",
    "batch_size",
    "speed_loss_weight",
    "smooth_l1_beta",
    "seed",
    "checkpoint_every",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "augment",
    "aug_brightness",
    "aug_shadow_prob",
    "aug_shadow_dim",
    "aug_translate_x",
    "aug_translate_y",
    "aug_rotate_deg",
    "aug_blur_kernel",
    "aug_blur_prob",
    "aug_translate_label_per_px",
    "data",
    "test_data",
    "train_frac",
    "camera",
    "columns",
    "stride",
    "resize",
    "flow_levels",
    "flow_iters",
    "flow_alpha",
    "flow_warps",
    "flow_history",
    "flow_mag_cap",
    "flow_cache",
    "out_dir",
    "smooth",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    /// `train.augment` is derived from `augment` and `augment_policy`.
    pub train: TrainConfig,
    pub augment: bool,
    pub augment_policy: AugmentPolicy,
    /// Drive index split into train and val.
    pub data: Option<PathBuf>,
    /// Held-out drive index, evaluated whole.
    pub test_data: Option<PathBuf>,
    pub train_frac: f64,
    pub camera: Option<Camera>,
    pub columns: String,
    pub stride: usize,
    /// Resize frames to `input_h × input_w` at load.
    pub resize: bool,
    pub flow: FlowParams,
    pub flow_history: usize,
    pub flow_mag_cap: f64,
    pub flow_cache: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub smooth: Option<f64>,
}

impl RunConfig {
    pub fn for_kind(kind: ModelKind) -> Self {
        let seq = SequenceOptions::default();
        RunConfig {
            model: ModelConfig::for_kind(kind),
            train: TrainConfig::default(),
            augment: true,
            augment_policy: AugmentPolicy::default(),
            data: None,
            test_data: None,
            train_frac: 0.8,
            camera: Some(Camera::Center),
            columns: String::new(),
            stride: seq.stride,
            resize: true,
            flow: seq.flow,
            flow_history: seq.flow_history,
            flow_mag_cap: seq.flow_mag_cap,
            flow_cache: None,
            out_dir: PathBuf::from("runs/default"),
            smooth: None,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::load_with(path, &[])
    }

    /// Reads `path`, then applies `overrides` (`key=value`) on top.
    pub fn load_with(path: impl AsRef<Path>, overrides: &[String]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_with(&text, path.parent(), overrides)
    }

    pub fn parse(text: &str, base: Option<&Path>) -> Result<Self> {
        Self::parse_with(text, base, &[])
    }

    pub fn parse_with(text: &str, base: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut entries: Vec<(String, String, String)> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let key = k.trim().to_owned();
            if entries.iter().any(|e| e.0 == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key `{key}`",
                    n + 1
                )));
            }
            entries.push((key, v.trim().to_owned(), format!("line {}", n + 1)));
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {o:?} is not key=value")))?;
            let key = k.trim().to_owned();
            entries.retain(|e| e.0 != key);
            entries.push((key, v.trim().to_owned(), format!("override {o:?}")));
        }
        if let Some(e) = entries.iter().find(|e| !KEYS.contains(&e.0.as_str())) {
            return Err(Error::Config(format!("{}: unknown key `{}`", e.2, e.0)));
        }

        let kind = match entries.iter().find(|e| e.0 == "model") {
            Some(e) => e.1.parse::<ModelKind>()?,
            None => ModelKind::DualTransformer,
        };
        let mut cfg = RunConfig::for_kind(kind);
        for (key, value, at) in entries.iter().filter(|e| e.0 != "model") {
            cfg.set(key, value, base)
                .map_err(|e| Error::Config(format!("{at}: `{key}`: {}", strip_prefix(e))))?;
        }
        if !cfg.model.predict_speed {
            if entries.iter().any(|e| e.0 == "speed_loss_weight")
                && cfg.train.speed_loss_weight != 0.0
            {
                return Err(Error::Config(format!(
                    "{} has no speed head; speed_loss_weight must be 0",
                    cfg.model.kind
                )));
            }
            cfg.train.speed_loss_weight = 0.0;
        }
        cfg.sync();
        cfg.validate()?;
        Ok(cfg)
    }

    fn sync(&mut self) {
        self.train.augment = self.augment.then(|| self.augment_policy.clone());
    }

    fn set(&mut self, key: &str, v: &str, base: Option<&Path>) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let a = &mut self.augment_policy;
        match key {
            "seq_len" => m.seq_len = num(v)?,
            "feature_dim" => m.feature_dim = num(v)?,
            "heads" => m.heads = num(v)?,
            "encoder_layers" => m.encoder_layers = num(v)?,
            "fused_dim" => m.fused_dim = num(v)?,
            "ff_dim" => m.ff_dim = num(v)?,
            "lstm_hidden" => m.lstm_hidden = num(v)?,
            "lstm_layers" => m.lstm_layers = num(v)?,
            "backbone_channels" => m.backbone_channels = list(v)?,
            "stem_kernel" => m.stem_kernel = num(v)?,
            "stem_stride" => m.stem_stride = num(v)?,
            "input_h" => m.input_h = num(v)?,
            "input_w" => m.input_w = num(v)?,
            "predict_speed" => m.predict_speed = num(v)?,
            "positional_encoding" => m.positional_encoding = num(v)?,
            "lr" => t.lr0 = num(v)?,
            "decay_epochs" => t.decay_epochs = list(v)?,
            "decay_factor" => t.decay_factor = num(v)?,
            "epochs" => t.epochs = num(v)?,
            "batch_size" => t.batch_size = num(v)?,
            "speed_loss_weight" => t.speed_loss_weight = num(v)?,
            "smooth_l1_beta" => t.smooth_l1_beta = num(v)?,
            "seed" => t.seed = num(v)?,
            "checkpoint_every" => t.checkpoint_every = num(v)?,
            "adam_beta1" => t.adam.beta1 = num(v)?,
            "adam_beta2" => t.adam.beta2 = num(v)?,
            "adam_eps" => t.adam.eps = num(v)?,
            "augment" => self.augment = num(v)?,
            "aug_brightness" => {
                let r: Vec<f64> = list(v)?;
                if r.len() != 2 {
                    return Err(Error::Config("expected `lo,hi`".into()));
                }
                a.brightness_range = (r[0], r[1]);
            }
            "aug_shadow_prob" => a.shadow_prob = num(v)?,
            "aug_shadow_dim" => a.shadow_dim = num(v)?,
            "aug_translate_x" => a.translate_x_px = num(v)?,
            "aug_translate_y" => a.translate_y_px = num(v)?,
            "aug_rotate_deg" => a.rotate_deg = num(v)?,
            "aug_blur_kernel" => a.blur_kernel = num(v)?,
            "aug_blur_prob" => a.blur_prob = num(v)?,
            "aug_translate_label_per_px" => a.translate_label_per_px = num(v)?,
            "data" => self.data = opt_path(v, base),
            "test_data" => self.test_data = opt_path(v, base),
            "train_frac" => self.train_frac = num(v)?,
            "camera" => {
                self.camera = match v {
                    "all" => None,
                    c => Some(c.parse()?),
                }
            }
            "columns" => self.columns = v.to_owned(),
            "stride" => self.stride = num(v)?,
            "resize" => self.resize = num(v)?,
            "flow_levels" => self.flow.levels = num(v)?,
            "flow_iters" => self.flow.iters = num(v)?,
            "flow_alpha" => self.flow.alpha = num(v)?,
            "flow_warps" => self.flow.warps = num(v)?,
            "flow_history" => self.flow_history = num(v)?,
            "flow_mag_cap" => self.flow_mag_cap = num(v)?,
            "flow_cache" => self.flow_cache = opt_path(v, base),
            "out_dir" => self.out_dir = opt_path(v, base).unwrap_or_default(),
            "smooth" => {
                self.smooth = match v {
                    "none" | "" => None,
                    f => Some(num(f)?),
                }
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.augment {
            self.augment_policy.validate()?;
        }
        if !(self.train_frac > 0.0 && self.train_frac < 1.0) {
            return Err(Error::Config(format!(
                "train_frac {} must lie in (0, 1)",
                self.train_frac
            )));
        }
        if self.stride == 0 || self.flow_history == 0 {
            return Err(Error::Config("stride and flow_history must be >= 1".into()));
        }
        if self.flow_mag_cap.is_nan() || self.flow_mag_cap <= 0.0 {
            return Err(Error::Config("flow_mag_cap must be > 0".into()));
        }
        if let Some(f) = self.smooth {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::Config(format!("smooth {f} outside (0, 1]")));
            }
        }
        ColumnMap::parse(&self.columns)?;
        Ok(())
    }

    pub fn index_options(&self) -> Result<IndexOptions> {
        Ok(IndexOptions {
            camera: self.camera,
            columns: ColumnMap::parse(&self.columns)?,
            check_paths: true,
        })
    }

    pub fn sequence_options(&self) -> SequenceOptions {
        SequenceOptions {
            seq_len: self.model.seq_len,
            stride: self.stride,
            with_flow: self.model.kind.uses_flow(),
            flow: self.flow,
            flow_history: self.flow_history,
            flow_mag_cap: self.flow_mag_cap,
            cache_dir: self.flow_cache.clone(),
            resize: self
                .resize
                .then_some((self.model.input_h, self.model.input_w)),
        }
    }

    /// Every key with its effective value; parsing the result reproduces `self`.
    pub fn resolved(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let a = &self.augment_policy;
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or("none".to_owned(), |p| p.display().to_string())
        };
        let values: Vec<String> = vec![
            m.kind.to_string(),
            m.seq_len.to_string(),
            m.feature_dim.to_string(),
            m.heads.to_string(),
            m.encoder_layers.to_string(),
            m.fused_dim.to_string(),
            m.ff_dim.to_string(),
            m.lstm_hidden.to_string(),
            m.lstm_layers.to_string(),
            join(&m.backbone_channels),
            m.stem_kernel.to_string(),
            m.stem_stride.to_string(),
            m.input_h.to_string(),
            m.input_w.to_string(),
            m.predict_speed.to_string(),
            m.positional_encoding.to_string(),
            t.lr0.to_string(),
            join(&t.decay_epochs),
            t.decay_factor.to_string(),
            t.epochs.to_string(),
            t.batch_size.to_string(),
            t.speed_loss_weight.to_string(),
            t.smooth_l1_beta.to_string(),
            t.seed.to_string(),
            t.checkpoint_every.to_string(),
            t.adam.beta1.to_string(),
            t.adam.beta2.to_string(),
            t.adam.eps.to_string(),
            self.augment.to_string(),
            format!("{},{}", a.brightness_range.0, a.brightness_range.1),
            a.shadow_prob.to_string(),
            a.shadow_dim.to_string(),
            a.translate_x_px.to_string(),
            a.translate_y_px.to_string(),
            a.rotate_deg.to_string(),
            a.blur_kernel.to_string(),
            a.blur_prob.to_string(),
            a.translate_label_per_px.to_string(),
            path(&self.data),
            path(&self.test_data),
            self.train_frac.to_string(),
            self.camera.map_or("all".to_owned(), |c| c.to_string()),
            self.columns.clone(),
            self.stride.to_string(),
            self.resize.to_string(),
            self.flow.levels.to_string(),
            self.flow.iters.to_string(),
            self.flow.alpha.to_string(),
            self.flow.warps.to_string(),
            self.flow_history.to_string(),
            self.flow_mag_cap.to_string(),
            path(&self.flow_cache),
            self.out_dir.display().to_string(),
            self.smooth.map_or("none".to_owned(), |f| f.to_string()),
        ];
        debug_assert_eq!(values.len(), KEYS.len());
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn strip_prefix(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}

fn num<T: FromStr>(v: &str) -> Result<T> {
    v.parse().map_err(|_| {
        Error::Config(format!(
            "cannot parse {v:?} as {}",
            std::any::type_name::<T>()
        ))
    })
}

fn list<T: FromStr>(v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty() && *s != "none")
        .map(num)
        .collect()
}

fn opt_path(v: &str, base: Option<&Path>) -> Option<PathBuf> {
    match v {
        "" | "none" => None,
        p => {
            let p = PathBuf::from(p);
            Some(match base {
                Some(b) if p.is_relative() && !b.as_os_str().is_empty() => b.join(p),
                _ => p,
            })
        }
    }
}
