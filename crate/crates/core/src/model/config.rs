use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Dave2,
    ResnetReg,
    CnnLstm,
    DualTransformer,
    SimpleTransformer,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::Dave2,
        ModelKind::ResnetReg,
        ModelKind::CnnLstm,
        ModelKind::DualTransformer,
        ModelKind::SimpleTransformer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Dave2 => "dave2",
            ModelKind::ResnetReg => "resnet_reg",
            ModelKind::CnnLstm => "cnn_lstm",
            ModelKind::DualTransformer => "dual_transformer",
            ModelKind::SimpleTransformer => "simple_transformer",
        }
    }

    /// Single-frame regressors predict one angle per window.
    pub fn is_single_frame(self) -> bool {
        matches!(self, ModelKind::Dave2 | ModelKind::ResnetReg)
    }

    pub fn uses_flow(self) -> bool {
        self == ModelKind::DualTransformer
    }

    pub fn has_attention(self) -> bool {
        matches!(
            self,
            ModelKind::DualTransformer | ModelKind::SimpleTransformer
        )
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind `{s}`")))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub seq_len: usize,
    pub feature_dim: usize,
    pub heads: usize,
    pub encoder_layers: usize,
    pub fused_dim: usize,
    pub ff_dim: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    pub backbone_channels: Vec<usize>,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub predict_speed: bool,
    pub positional_encoding: bool,
}

impl ModelConfig {
    /// Full-size defaults for `kind`.
    pub fn for_kind(kind: ModelKind) -> Self {
        let (input_h, input_w) = if kind == ModelKind::Dave2 {
            (120, 320)
        } else {
            (224, 224)
        };
        ModelConfig {
            kind,
            seq_len: if kind.is_single_frame() { 1 } else { 5 },
            feature_dim: 512,
            heads: 4,
            encoder_layers: 2,
            fused_dim: 128,
            ff_dim: 2048,
            lstm_hidden: 256,
            lstm_layers: 2,
            backbone_channels: vec![64, 128, 256, 512],
            stem_kernel: 7,
            stem_stride: 2,
            input_h,
            input_w,
            predict_speed: kind == ModelKind::DualTransformer,
            positional_encoding: true,
        }
    }

    /// Tiny configuration used by gradient checks: 8×8 inputs, width 8.
    pub fn miniature(kind: ModelKind, seq_len: usize) -> Self {
        ModelConfig {
            seq_len: if kind.is_single_frame() { 1 } else { seq_len },
            feature_dim: 8,
            heads: 4,
            encoder_layers: 2,
            fused_dim: 4,
            ff_dim: 16,
            lstm_hidden: 4,
            lstm_layers: 2,
            backbone_channels: vec![2, 3],
            stem_kernel: 3,
            stem_stride: 1,
            input_h: 8,
            input_w: 8,
            ..Self::for_kind(kind)
        }
    }

    pub fn head_dim(&self) -> usize {
        self.feature_dim / self.heads
    }

    /// Smallest accepted input side for the residual backbone.
    pub fn backbone_min_input(&self) -> usize {
        self.stem_stride << self.backbone_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seq_len == 0 {
            return bad("seq_len must be >= 1".into());
        }
        if self.kind.is_single_frame() && self.seq_len != 1 {
            return bad(format!(
                "{} predicts from one frame; seq_len must be 1",
                self.kind
            ));
        }
        if self.heads == 0 || !self.feature_dim.is_multiple_of(self.heads) {
            return bad(format!(
                "feature_dim {} not divisible by heads {}",
                self.feature_dim, self.heads
            ));
        }
        if self.kind == ModelKind::SimpleTransformer && self.predict_speed {
            return bad("simple_transformer has no speed head; set predict_speed = false".into());
        }
        if self.predict_speed && self.kind != ModelKind::DualTransformer {
            return bad(format!("{} has no speed head", self.kind));
        }
        if self.backbone_channels.is_empty() || self.backbone_channels.contains(&0) {
            return bad("backbone_channels must be a nonempty list of positive widths".into());
        }
        if [
            self.feature_dim,
            self.fused_dim,
            self.ff_dim,
            self.lstm_hidden,
            self.lstm_layers,
            self.encoder_layers,
        ]
        .contains(&0)
            || self.stem_kernel == 0
            || self.stem_stride == 0
        {
            return bad("model widths, depths, stem kernel and stride must be positive".into());
        }
        if self.input_h < 2 || self.input_w < 2 {
            return bad(format!("input {}x{} too small", self.input_h, self.input_w));
        }
        Ok(())
    }

    /// Canonical text used for hashing and for the resolved run config.
    pub fn canonical(&self) -> String {
        let ch: Vec<String> = self
            .backbone_channels
            .iter()
            .map(|c| c.to_string())
            .collect();
        format!(
            "kind={};seq_len={};feature_dim={};heads={};encoder_layers={};fused_dim={};ff_dim={};\
             lstm_hidden={};lstm_layers={};backbone_channels={};stem_kernel={};stem_stride={};\
             input_h={};input_w={};predict_speed={};positional_encoding={}",
            self.kind,
            self.seq_len,
            self.feature_dim,
            self.heads,
            self.encoder_layers,
            self.fused_dim,
            self.ff_dim,
            self.lstm_hidden,
            self.lstm_layers,
            ch.join(","),
            self.stem_kernel,
            self.stem_stride,
            self.input_h,
            self.input_w,
            self.predict_speed,
            self.positional_encoding
        )
    }

    /// First 8 bytes (little-endian) of SHA-256 over [`Self::canonical`].
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.canonical().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_architecture_table() {
        let c = ModelConfig::for_kind(ModelKind::DualTransformer);
        assert_eq!(
            (c.feature_dim, c.heads, c.encoder_layers, c.fused_dim),
            (512, 4, 2, 128)
        );
        assert_eq!((c.seq_len, c.head_dim(), c.ff_dim), (5, 128, 2048));
        assert_eq!(c.backbone_min_input(), 32);
        assert!(c.validate().is_ok());
        let d = ModelConfig::for_kind(ModelKind::Dave2);
        assert_eq!((d.input_h, d.input_w, d.seq_len), (120, 320, 1));
    }

    #[test]
    fn invariants_enforced() {
        let mut c = ModelConfig::for_kind(ModelKind::SimpleTransformer);
        assert!(c.validate().is_ok());
        c.predict_speed = true;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::for_kind(ModelKind::DualTransformer);
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::for_kind(ModelKind::Dave2);
        c.seq_len = 5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_tracks_config() {
        let a = ModelConfig::for_kind(ModelKind::CnnLstm);
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.lstm_hidden = 128;
        assert_ne!(a.hash(), b.hash());
        assert_eq!("cnn_lstm".parse::<ModelKind>().unwrap(), ModelKind::CnnLstm);
    }
}
