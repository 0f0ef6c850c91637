//! The five architectures behind one [`Model`] type.
//!
//! | kind                 | input                  | output per window |
//! |----------------------|------------------------|-------------------|
//! | `dave2`              | last frame, 120×320    | 1 angle           |
//! | `resnet_reg`         | last frame             | 1 angle           |
//! | `cnn_lstm`           | L frames               | L angles          |
//! | `dual_transformer`   | L frames + L flow imgs | L angles, L speeds|
//! | `simple_transformer` | L frames               | L angles          |

mod backbone;
pub mod checkpoint;
mod config;
pub mod dave2;
mod layers;
mod params;
pub mod transformer;

pub use backbone::{ResidualBackbone, ResidualBlock};
pub use config::{ModelConfig, ModelKind};
pub use layers::{lstm_cell, Builder, Conv, Linear, LstmWeights, Norm, LAYER_NORM_EPS};
pub use params::{kaiming_uniform, uniform_fan_in, ParamId, ParamStore};
pub use transformer::{positional_encoding, CrossModalEncoderLayer, LayerAttention};

use std::fmt;

use dave2::Dave2;

use crate::error::{Error, Result};
use crate::rng::derive_rng;
use crate::tensor::{Graph, Tensor, Var};

/// Batched model input: `rgb` and `flow` are `[B×L×3×H×W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelInput {
    pub rgb: Tensor,
    pub flow: Option<Tensor>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Rgb,
    Flow,
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Rgb => "rgb",
            Stream::Flow => "flow",
        })
    }
}

/// Attention weights of one (layer, branch, head), `[B×L×L]`; rows are
/// query positions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub layer: usize,
    pub branch: Stream,
    pub head: usize,
    pub weights: Tensor,
}

/// Evaluated predictions; `angle` and `speed` are `[B×L_out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub angle: Tensor,
    pub speed: Option<Tensor>,
    pub attention: Vec<AttentionMap>,
}

/// Graph nodes of one forward pass.
pub struct ForwardVars {
    pub angle: Var,
    pub speed: Option<Var>,
    pub attention: Vec<LayerAttention>,
}

#[derive(Clone, Debug)]
struct ResnetReg {
    backbone: ResidualBackbone,
    reduce: Linear,
    head: Linear,
}

#[derive(Clone, Debug)]
struct CnnLstm {
    backbone: ResidualBackbone,
    lstm: Vec<LstmWeights>,
    hidden: Linear,
    head: Linear,
}

#[derive(Clone, Debug)]
struct SeqTransformer {
    rgb_backbone: ResidualBackbone,
    flow_backbone: Option<ResidualBackbone>,
    layers: Vec<CrossModalEncoderLayer>,
    fuse: Linear,
    reduce: Linear,
    head_angle: Linear,
    head_speed: Option<Linear>,
}

#[derive(Clone, Debug)]
enum Arch {
    Dave2(Dave2),
    ResnetReg(ResnetReg),
    CnnLstm(CnnLstm),
    Transformer(SeqTransformer),
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    arch: Arch,
}

impl Model {
    /// Freshly initialised model; weights depend only on `(config, seed)`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let mut rng = derive_rng(seed, &[0x1417]);
        let mut b = Builder {
            store: &mut params,
            rng: &mut rng,
        };
        let c = &config;
        let arch = match c.kind {
            ModelKind::Dave2 => Arch::Dave2(Dave2::new(&mut b, c.input_h, c.input_w)?),
            ModelKind::ResnetReg => Arch::ResnetReg(ResnetReg {
                backbone: ResidualBackbone::new(&mut b, "rgb_backbone", c),
                reduce: b.linear("reduce", c.feature_dim, c.fused_dim),
                head: b.linear("head_angle", c.fused_dim, 1),
            }),
            ModelKind::CnnLstm => {
                let backbone = ResidualBackbone::new(&mut b, "rgb_backbone", c);
                let lstm = (0..c.lstm_layers)
                    .map(|i| {
                        let input = if i == 0 { c.feature_dim } else { c.lstm_hidden };
                        b.lstm(&format!("lstm{i}"), input, c.lstm_hidden)
                    })
                    .collect();
                Arch::CnnLstm(CnnLstm {
                    backbone,
                    lstm,
                    hidden: b.linear("reduce", c.lstm_hidden, c.fused_dim),
                    head: b.linear("head_angle", c.fused_dim, 1),
                })
            }
            ModelKind::DualTransformer | ModelKind::SimpleTransformer => {
                let dual = c.kind == ModelKind::DualTransformer;
                let rgb_backbone = ResidualBackbone::new(&mut b, "rgb_backbone", c);
                let flow_backbone = dual.then(|| ResidualBackbone::new(&mut b, "flow_backbone", c));
                let layers = (0..c.encoder_layers)
                    .map(|i| {
                        CrossModalEncoderLayer::new(
                            &mut b,
                            &format!("encoder{i}"),
                            c.feature_dim,
                            c.ff_dim,
                            c.heads,
                            dual,
                        )
                    })
                    .collect();
                let fuse_in = if dual {
                    2 * c.feature_dim
                } else {
                    c.feature_dim
                };
                Arch::Transformer(SeqTransformer {
                    rgb_backbone,
                    flow_backbone,
                    layers,
                    fuse: b.linear("fuse", fuse_in, c.feature_dim),
                    reduce: b.linear("reduce", c.feature_dim, c.fused_dim),
                    head_angle: b.linear("head_angle", c.fused_dim, 1),
                    head_speed: c
                        .predict_speed
                        .then(|| b.linear("head_speed", c.fused_dim, 1)),
                })
            }
        };
        Ok(Model {
            config,
            params,
            arch,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Output steps per window: 1 for single-frame models, L otherwise.
    pub fn output_steps(&self) -> usize {
        if self.config.kind.is_single_frame() {
            1
        } else {
            self.config.seq_len
        }
    }

    fn check_input(&self, input: &ModelInput) -> Result<usize> {
        let c = &self.config;
        let s = input.rgb.shape();
        let want = [c.seq_len, 3, c.input_h, c.input_w];
        if s.len() != 5 || s[1..] != want {
            return Err(Error::dim(format!(
                "{} expects rgb [B×{}×3×{}×{}], got {s:?}",
                c.kind, c.seq_len, c.input_h, c.input_w
            )));
        }
        match (&input.flow, c.kind.uses_flow()) {
            (Some(f), true) if f.shape() != s => Err(Error::dim(format!(
                "flow input {:?} does not match rgb {s:?}",
                f.shape()
            ))),
            (None, true) => Err(Error::contract(format!("{} needs flow input", c.kind))),
            (Some(_), false) => Err(Error::contract(format!(
                "{} does not take flow input",
                c.kind
            ))),
            _ => Ok(s[0]),
        }
    }

    /// Records the forward pass on `g`; `p` are this model's bound params.
    pub fn forward(&self, g: &mut Graph, p: &[Var], input: &ModelInput) -> Result<ForwardVars> {
        let batch = self.check_input(input)?;
        let c = &self.config;
        let l = c.seq_len;
        let frames_shape = [batch * l, 3, c.input_h, c.input_w];
        let rgb = g.constant(input.rgb.clone().reshape(&frames_shape)?);
        match &self.arch {
            Arch::Dave2(net) => {
                let angle = net.forward(g, p, rgb)?;
                Ok(ForwardVars {
                    angle,
                    speed: None,
                    attention: Vec::new(),
                })
            }
            Arch::ResnetReg(net) => {
                let f = net.backbone.forward(g, p, rgb)?;
                let h = net.reduce.forward(g, p, f)?;
                let h = g.relu(h);
                let angle = net.head.forward(g, p, h)?;
                Ok(ForwardVars {
                    angle,
                    speed: None,
                    attention: Vec::new(),
                })
            }
            Arch::CnnLstm(net) => {
                let feats = net.backbone.forward(g, p, rgb)?;
                let seq = lstm_stack(g, p, &net.lstm, feats, batch, l)?;
                let h = net.hidden.forward(g, p, seq)?;
                let h = g.relu(h);
                let a = net.head.forward(g, p, h)?;
                let angle = g.reshape(a, &[batch, l])?;
                Ok(ForwardVars {
                    angle,
                    speed: None,
                    attention: Vec::new(),
                })
            }
            Arch::Transformer(net) => {
                let flow = match (&net.flow_backbone, &input.flow) {
                    (Some(fb), Some(ft)) => {
                        let fv = g.constant(ft.clone().reshape(&frames_shape)?);
                        Some(fb.forward(g, p, fv)?)
                    }
                    _ => None,
                };
                let rgb_feats = net.rgb_backbone.forward(g, p, rgb)?;
                self.transformer_head(g, p, net, rgb_feats, flow, batch)
            }
        }
    }

    fn transformer_head(
        &self,
        g: &mut Graph,
        p: &[Var],
        net: &SeqTransformer,
        rgb_feats: Var,
        flow_feats: Option<Var>,
        batch: usize,
    ) -> Result<ForwardVars> {
        let c = &self.config;
        let l = c.seq_len;
        let (mut rgb, mut flow) = (rgb_feats, flow_feats);
        if c.positional_encoding {
            let pe = positional_encoding(l, c.feature_dim);
            let tiled: Vec<Tensor> = (0..batch).map(|_| pe.clone()).collect();
            let tiled = Tensor::stack(&tiled)?.reshape(&[batch * l, c.feature_dim])?;
            let pe = g.constant(tiled);
            rgb = g.add(rgb, pe)?;
            if let Some(f) = flow {
                flow = Some(g.add(f, pe)?);
            }
        }
        let mut attention = Vec::with_capacity(net.layers.len());
        for layer in &net.layers {
            let (r, f, a) = layer.forward(g, p, rgb, flow, l)?;
            rgb = r;
            flow = f;
            attention.push(a);
        }
        let joined = match flow {
            Some(f) => g.concat_cols(&[rgb, f])?,
            None => rgb,
        };
        let x = net.fuse.forward(g, p, joined)?;
        let x = g.relu(x);
        let x = net.reduce.forward(g, p, x)?;
        let x = g.relu(x);
        let a = net.head_angle.forward(g, p, x)?;
        let angle = g.reshape(a, &[batch, l])?;
        let speed = match &net.head_speed {
            Some(h) => {
                let s = h.forward(g, p, x)?;
                Some(g.reshape(s, &[batch, l])?)
            }
            None => None,
        };
        Ok(ForwardVars {
            angle,
            speed,
            attention,
        })
    }

    /// Forward pass without gradient bookkeeping.
    pub fn predict(&self, input: &ModelInput) -> Result<ModelOutput> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let fv = self.forward(&mut g, &p, input)?;
        Ok(collect_output(&g, &fv))
    }
}

/// Reads the values of a recorded forward pass.
pub fn collect_output(g: &Graph, fv: &ForwardVars) -> ModelOutput {
    let mut attention = Vec::new();
    for (layer, la) in fv.attention.iter().enumerate() {
        let branches = [
            (Stream::Rgb, Some(&la.rgb)),
            (Stream::Flow, la.flow.as_ref()),
        ];
        for (branch, maps) in branches {
            let Some(maps) = maps else { continue };
            for (head, per_sample) in maps.iter().enumerate() {
                let parts: Vec<Tensor> = per_sample.iter().map(|&v| g.value(v).clone()).collect();
                attention.push(AttentionMap {
                    layer,
                    branch,
                    head,
                    weights: Tensor::stack(&parts).expect("equal L×L maps"),
                });
            }
        }
    }
    ModelOutput {
        angle: g.value(fv.angle).clone(),
        speed: fv.speed.map(|s| g.value(s).clone()),
        attention,
    }
}

/// Stacked LSTM over `[B·L×in]` rows (sample-major); returns `[B·L×hidden]`.
fn lstm_stack(
    g: &mut Graph,
    p: &[Var],
    layers: &[LstmWeights],
    x: Var,
    batch: usize,
    l: usize,
) -> Result<Var> {
    let mut seq = x;
    for w in layers {
        let zeros = g.constant(Tensor::zeros(&[batch, w.hidden]));
        let (mut h, mut c) = (zeros, zeros);
        let mut steps = Vec::with_capacity(l);
        for t in 0..l {
            let rows: Vec<usize> = (0..batch).map(|b| b * l + t).collect();
            let xt = g.select_rows(seq, &rows)?;
            let (h2, c2) = lstm_cell(g, p, w, xt, h, c)?;
            h = h2;
            c = c2;
            steps.push(h);
        }
        // time-major [L·B×H] back to sample-major
        let time_major = g.concat_rows(&steps)?;
        let order: Vec<usize> = (0..batch * l).map(|i| (i % l) * batch + i / l).collect();
        seq = g.select_rows(time_major, &order)?;
    }
    Ok(seq)
}
