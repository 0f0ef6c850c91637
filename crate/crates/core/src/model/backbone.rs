//! Scratch-trained residual CNN producing one feature vector per image.

use rand_chacha::ChaCha8Rng;

use super::layers::{Builder, Conv, Linear};
use super::params::ParamStore;
use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

/// Two 3×3 convolutions with an identity skip: `relu(x + conv_b(relu(conv_a(x))))`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv_a: Conv,
    pub conv_b: Conv,
}

impl ResidualBlock {
    fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        ResidualBlock {
            conv_a: b.conv(&format!("{name}.a"), channels, channels, 3, 1, 1),
            conv_b: b.conv(&format!("{name}.b"), channels, channels, 3, 1, 1),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = self.conv_a.forward(g, p, x)?;
        let y = g.relu(y);
        let y = self.conv_b.forward(g, p, y)?;
        let s = g.add(x, y)?;
        Ok(g.relu(s))
    }
}

#[derive(Clone, Debug)]
pub struct ResidualBackbone {
    stem: Conv,
    /// Stride-2 transition into each stage after the first.
    downs: Vec<Conv>,
    blocks: Vec<ResidualBlock>,
    head: Linear,
    min_input: usize,
}

impl ResidualBackbone {
    pub(crate) fn new(b: &mut Builder, name: &str, cfg: &ModelConfig) -> Self {
        let ch = &cfg.backbone_channels;
        let stem = b.conv(
            &format!("{name}.stem"),
            3,
            ch[0],
            cfg.stem_kernel,
            cfg.stem_stride,
            cfg.stem_kernel / 2,
        );
        let mut downs = Vec::new();
        let mut blocks = Vec::new();
        for (i, &c) in ch.iter().enumerate() {
            if i > 0 {
                downs.push(b.conv(&format!("{name}.down{i}"), ch[i - 1], c, 3, 2, 1));
            }
            blocks.push(ResidualBlock::new(b, &format!("{name}.block{i}"), c));
        }
        let head = b.linear(
            &format!("{name}.proj"),
            *ch.last().expect("nonempty"),
            cfg.feature_dim,
        );
        ResidualBackbone {
            stem,
            downs,
            blocks,
            head,
            min_input: cfg.backbone_min_input(),
        }
    }

    /// Standalone construction registering weights under `name` in `store`.
    pub fn with_store(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &ModelConfig,
    ) -> Self {
        Self::new(&mut Builder { store, rng }, name, cfg)
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    /// `images: [N×3×H×W] -> [N×feature_dim]`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], images: Var) -> Result<Var> {
        let s = g.shape(images).to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::dim(format!("backbone expects [N×3×H×W], got {s:?}")));
        }
        if s[2] < self.min_input || s[3] < self.min_input {
            return Err(Error::dim(format!(
                "backbone input {}x{} below minimum {}",
                s[2], s[3], self.min_input
            )));
        }
        let mut x = self.stem.forward(g, p, images)?;
        x = g.relu(x);
        for (i, block) in self.blocks.iter().enumerate() {
            if i > 0 {
                x = self.downs[i - 1].forward(g, p, x)?;
                x = g.relu(x);
            }
            x = block.forward(g, p, x)?;
        }
        let pooled = g.global_avg_pool(x)?;
        self.head.forward(g, p, pooled)
    }
}
