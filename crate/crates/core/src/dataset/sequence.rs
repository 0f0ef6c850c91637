use std::path::PathBuf;

use super::cache::FlowCache;
use super::index::DriveIndex;
use crate::error::{Error, Result};
use crate::imaging::{
    compute_dense_flow, encode_flow_hsv, exponential_weights, read_ppm, resize_bilinear,
    weighted_flow_average, FlowField, FlowParams, Frame,
};
use crate::model::{ModelConfig, ModelInput};
use crate::tensor::Tensor;

/// Frames smaller than this on either side are rejected at load.
pub const MIN_FRAME_SIDE: usize = 8;
pub const DEFAULT_FLOW_MAG_CAP: f64 = 10.0;

/// `L` consecutive frames with their flow fields and labels.
/// `flows[0]` is always the zero field.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSample {
    pub timestamps: Vec<i64>,
    pub frames: Vec<Frame>,
    /// Empty when flow was not requested.
    pub flows: Vec<FlowField>,
    /// HSV encodings of `flows`, the model's flow-branch input.
    pub flow_images: Vec<Frame>,
    pub angles: Vec<f64>,
    pub speeds: Vec<f64>,
}

impl SequenceSample {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceOptions {
    pub seq_len: usize,
    pub stride: usize,
    /// Compute flow fields and flow images (needed by the dual transformer only).
    pub with_flow: bool,
    pub flow: FlowParams,
    /// Number of most recent pairwise flows averaged per step, within the window.
    pub flow_history: usize,
    pub flow_mag_cap: f64,
    pub cache_dir: Option<PathBuf>,
    /// `(height, width)` to resize frames to at load.
    pub resize: Option<(usize, usize)>,
}

impl Default for SequenceOptions {
    fn default() -> Self {
        SequenceOptions {
            seq_len: 5,
            stride: 1,
            with_flow: true,
            flow: FlowParams::default(),
            flow_history: 1,
            flow_mag_cap: DEFAULT_FLOW_MAG_CAP,
            cache_dir: None,
            resize: None,
        }
    }
}

/// Window start offsets: `floor((n - len) / stride) + 1` of them when `n >= len`.
pub fn window_starts(n: usize, len: usize, stride: usize) -> Vec<usize> {
    if len == 0 || stride == 0 || n < len {
        return Vec::new();
    }
    (0..=n - len).step_by(stride).collect()
}

fn load_frame(
    path: &std::path::Path,
    timestamp: i64,
    resize: Option<(usize, usize)>,
) -> Result<Frame> {
    let mut f = read_ppm(path)?;
    if let Some((h, w)) = resize {
        if (f.height(), f.width()) != (h, w) {
            f = resize_bilinear(&f, h, w)?;
        }
    }
    if f.width() < MIN_FRAME_SIDE || f.height() < MIN_FRAME_SIDE {
        return Err(Error::dim(format!(
            "{}: frame {}x{} smaller than {MIN_FRAME_SIDE}x{MIN_FRAME_SIDE}",
            path.display(),
            f.width(),
            f.height()
        )));
    }
    f.timestamp = timestamp;
    Ok(f)
}

/// Builds every window over `index`; each frame is decoded once and each
/// consecutive pair's flow computed (or read from the cache) once.
pub fn make_sequences(index: &DriveIndex, opts: &SequenceOptions) -> Result<Vec<SequenceSample>> {
    if opts.seq_len == 0 || opts.stride == 0 {
        return Err(Error::contract("seq_len and stride must be >= 1"));
    }
    if opts.with_flow
        && (opts.flow_history == 0 || opts.flow_mag_cap.is_nan() || opts.flow_mag_cap <= 0.0)
    {
        return Err(Error::contract(
            "flow_history must be >= 1 and flow_mag_cap > 0",
        ));
    }
    let rows = &index.rows;
    let starts = window_starts(rows.len(), opts.seq_len, opts.stride);
    let Some(&last_start) = starts.last() else {
        return Ok(Vec::new());
    };
    let used = last_start + opts.seq_len;

    let frames = rows[..used]
        .iter()
        .map(|r| load_frame(&r.path, r.timestamp, opts.resize))
        .collect::<Result<Vec<_>>>()?;
    if let Some(f) = frames.iter().find(|f| !f.same_size(&frames[0])) {
        return Err(Error::dim(format!(
            "frames differ in size: {}x{} vs {}x{}",
            f.width(),
            f.height(),
            frames[0].width(),
            frames[0].height()
        )));
    }

    // pair_flows[t] is the flow from frame t-1 to frame t
    let mut pair_flows: Vec<Option<FlowField>> = vec![None; used];
    if opts.with_flow {
        let cache = opts.cache_dir.as_ref().map(FlowCache::new).transpose()?;
        let mut needed = vec![false; used];
        for &s in &starts {
            needed[s + 1..s + opts.seq_len]
                .iter_mut()
                .for_each(|n| *n = true);
        }
        for t in (1..used).filter(|&t| needed[t]) {
            let flow = match &cache {
                Some(c) => c.get_or_compute(&frames[t - 1], &frames[t], &opts.flow)?,
                None => {
                    let mut f = compute_dense_flow(&frames[t - 1], &frames[t], &opts.flow)?;
                    f.quantize_f32();
                    f
                }
            };
            pair_flows[t] = Some(flow);
        }
    }

    let (w, h) = (frames[0].width(), frames[0].height());
    let mut out = Vec::with_capacity(starts.len());
    for &s in &starts {
        let window = s..s + opts.seq_len;
        let timestamps: Vec<i64> = rows[window.clone()].iter().map(|r| r.timestamp).collect();
        if timestamps.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::contract(format!(
                "timestamps not strictly increasing in window starting at row {s}"
            )));
        }
        let mut flows = Vec::new();
        let mut flow_images = Vec::new();
        if opts.with_flow {
            for j in 0..opts.seq_len {
                let flow = if j == 0 {
                    FlowField::zeros(w, h)
                } else {
                    let k = opts.flow_history.min(j);
                    let recent: Vec<FlowField> = (0..k)
                        .map(|a| pair_flows[s + j - a].clone().expect("pair computed"))
                        .collect();
                    if k == 1 {
                        recent.into_iter().next().expect("one flow")
                    } else {
                        weighted_flow_average(&recent, &exponential_weights(k))?
                    }
                };
                flow_images.push(encode_flow_hsv(&flow, opts.flow_mag_cap)?);
                flows.push(flow);
            }
        }
        out.push(SequenceSample {
            timestamps,
            frames: frames[window.clone()].to_vec(),
            flows,
            flow_images,
            angles: rows[window.clone()].iter().map(|r| r.angle).collect(),
            speeds: rows[window].iter().map(|r| r.speed).collect(),
        });
    }
    Ok(out)
}

/// Steps a model of `cfg` consumes from a sample: the last one for
/// single-frame kinds, all of them otherwise.
fn step_range(sample: &SequenceSample, cfg: &ModelConfig) -> Result<std::ops::Range<usize>> {
    let n = sample.len();
    if cfg.kind.is_single_frame() {
        if n == 0 {
            return Err(Error::contract("empty sequence sample"));
        }
        return Ok(n - 1..n);
    }
    if n != cfg.seq_len {
        return Err(Error::dim(format!(
            "sample has {n} frames, {} expects {}",
            cfg.kind, cfg.seq_len
        )));
    }
    Ok(0..n)
}

fn stack_frames<'a>(
    frames: impl Iterator<Item = &'a Frame>,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    let mut data = Vec::new();
    for f in frames {
        if (f.height(), f.width()) != (cfg.input_h, cfg.input_w) {
            return Err(Error::dim(format!(
                "frame {}x{} does not match model input {}x{}",
                f.width(),
                f.height(),
                cfg.input_w,
                cfg.input_h
            )));
        }
        data.extend(f.to_chw().into_data());
    }
    Ok(data)
}

/// Stacks samples into a `[B×L×3×H×W]` model input.
pub fn batch_input(samples: &[&SequenceSample], cfg: &ModelConfig) -> Result<ModelInput> {
    let steps = cfg.seq_len;
    let shape = [samples.len(), steps, 3, cfg.input_h, cfg.input_w];
    let mut rgb = Vec::new();
    let mut flow = Vec::new();
    for s in samples {
        let r = step_range(s, cfg)?;
        rgb.extend(stack_frames(s.frames[r.clone()].iter(), cfg)?);
        if cfg.kind.uses_flow() {
            if s.flow_images.len() != s.len() {
                return Err(Error::contract(
                    "dual_transformer needs samples built with flow",
                ));
            }
            flow.extend(stack_frames(s.flow_images[r].iter(), cfg)?);
        }
    }
    Ok(ModelInput {
        rgb: Tensor::new(&shape, rgb)?,
        flow: if cfg.kind.uses_flow() {
            Some(Tensor::new(&shape, flow)?)
        } else {
            None
        },
    })
}

/// Angle and speed targets `[B×L_out]` aligned with [`batch_input`].
pub fn batch_targets(samples: &[&SequenceSample], cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let mut angles = Vec::new();
    let mut speeds = Vec::new();
    let mut steps = 0;
    for s in samples {
        let r = step_range(s, cfg)?;
        steps = r.len();
        angles.extend_from_slice(&s.angles[r.clone()]);
        speeds.extend_from_slice(&s.speeds[r]);
    }
    let shape = [samples.len(), steps];
    Ok((Tensor::new(&shape, angles)?, Tensor::new(&shape, speeds)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_arithmetic() {
        assert_eq!(window_starts(5, 5, 1), vec![0]);
        assert_eq!(window_starts(7, 5, 1), vec![0, 1, 2]);
        assert_eq!(window_starts(4, 5, 1), Vec::<usize>::new());
        assert_eq!(window_starts(10, 3, 3), vec![0, 3, 6]);
        for n in 0..30 {
            for l in 1..6 {
                for s in 1..5 {
                    let expect = if n >= l { (n - l) / s + 1 } else { 0 };
                    assert_eq!(window_starts(n, l, s).len(), expect);
                }
            }
        }
    }
}
