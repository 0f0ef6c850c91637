//! Procedural two-lane road seen from a car following a piecewise-constant
//! curvature track. Labels come from the kinematic bicycle model.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::index::{write_index, Camera, DriveIndex, IndexRow};
use crate::error::{Error, Result};
use crate::imaging::{write_ppm, Frame};
use crate::rng::derive_rng;

pub const WHEELBASE_M: f64 = 2.85;
/// Largest accepted |steering angle| for a segment, radians.
pub const MAX_STEER_RAD: f64 = 0.6;

const LANE_WIDTH: f64 = 3.5;
const LINE_HALF_WIDTH: f64 = 0.1;
const DASH_ON: f64 = 3.0;
const DASH_PERIOD: f64 = 9.0;
const VIEW_DISTANCE: f64 = 80.0;
const CENTRELINE_STEP: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Segment {
    /// 1/m, positive turns left.
    pub curvature: f64,
    pub length: f64,
}

/// `v(t) = base + amplitude · sin(2πt / period)`, m/s.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedProfile {
    pub base: f64,
    pub amplitude: f64,
    pub period_s: f64,
}

impl SpeedProfile {
    pub fn constant(v: f64) -> Self {
        SpeedProfile {
            base: v,
            amplitude: 0.0,
            period_s: 1.0,
        }
    }

    pub fn speed_at(&self, t: f64) -> f64 {
        self.base + self.amplitude * (2.0 * PI * t / self.period_s).sin()
    }

    /// Distance travelled after `t` seconds.
    pub fn distance_at(&self, t: f64) -> f64 {
        let w = 2.0 * PI / self.period_s;
        self.base * t + self.amplitude / w * (1.0 - (w * t).cos())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackSpec {
    /// Driven in order and repeated when the car runs past the end.
    pub segments: Vec<Segment>,
    pub speed: SpeedProfile,
    pub fps: f64,
    pub camera_height: f64,
    /// Horizontal field of view, degrees.
    pub fov_deg: f64,
    /// Downward camera pitch, degrees.
    pub pitch_deg: f64,
    /// Camera lateral position from the centre line, metres (negative = right lane).
    pub lane_offset: f64,
    pub width: usize,
    pub height: usize,
    /// Seeds the ground texture and the per-frame sensor noise.
    pub seed: u64,
    /// Standard deviation-like amplitude of uniform per-pixel noise.
    pub sensor_noise: f64,
}

impl Default for TrackSpec {
    fn default() -> Self {
        TrackSpec {
            segments: vec![Segment {
                curvature: 0.0,
                length: 200.0,
            }],
            speed: SpeedProfile::constant(8.0),
            fps: 10.0,
            camera_height: 1.5,
            fov_deg: 70.0,
            pitch_deg: 8.0,
            lane_offset: -LANE_WIDTH / 2.0,
            width: 64,
            height: 64,
            seed: 0,
            sensor_noise: 0.01,
        }
    }
}

fn seg(curvature: f64, length: f64) -> Segment {
    Segment { curvature, length }
}

/// Parses `κ:len,κ:len,...`; curvature may be written as `1/50`.
pub fn parse_segments(spec: &str) -> Result<Vec<Segment>> {
    let num = |s: &str| -> Result<f64> {
        let s = s.trim();
        let v = match s.split_once('/') {
            Some((a, b)) => a
                .trim()
                .parse::<f64>()
                .ok()
                .zip(b.trim().parse::<f64>().ok())
                .map(|(a, b)| a / b),
            None => s.parse().ok(),
        };
        v.ok_or_else(|| Error::Config(format!("cannot parse {s:?} as a number")))
    };
    spec.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let (k, len) = p
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("segment {p:?} is not curvature:length")))?;
            Ok(seg(num(k)?, num(len)?))
        })
        .collect()
}

impl TrackSpec {
    /// `straight`, `curve50`, `mixed`, `mixed_b`, `twisty`, `twisty_b`, or an
    /// inline segment list. The `twisty` tracks have sharp curves (labels up
    /// to about 0.3 rad) and a varying speed.
    pub fn named(name: &str) -> Result<Self> {
        let segments = match name {
            "straight" => vec![seg(0.0, 200.0)],
            "curve50" => vec![seg(1.0 / 50.0, 200.0)],
            "mixed" => vec![
                seg(0.0, 30.0),
                seg(1.0 / 50.0, 40.0),
                seg(0.0, 20.0),
                seg(-1.0 / 40.0, 30.0),
                seg(1.0 / 80.0, 40.0),
                seg(0.0, 15.0),
                seg(-1.0 / 60.0, 35.0),
            ],
            "mixed_b" => vec![
                seg(0.0, 20.0),
                seg(-1.0 / 45.0, 35.0),
                seg(1.0 / 70.0, 30.0),
                seg(0.0, 25.0),
                seg(1.0 / 35.0, 25.0),
                seg(-1.0 / 90.0, 40.0),
            ],
            "twisty" => vec![
                seg(0.0, 8.0),
                seg(1.0 / 12.0, 12.0),
                seg(0.0, 6.0),
                seg(-1.0 / 10.0, 10.0),
                seg(1.0 / 20.0, 12.0),
                seg(-1.0 / 15.0, 10.0),
                seg(0.0, 8.0),
            ],
            "twisty_b" => vec![
                seg(0.0, 6.0),
                seg(-1.0 / 14.0, 10.0),
                seg(1.0 / 9.0, 10.0),
                seg(0.0, 8.0),
                seg(-1.0 / 18.0, 12.0),
                seg(1.0 / 25.0, 12.0),
                seg(-1.0 / 11.0, 8.0),
            ],
            other if other.contains(':') => parse_segments(other)?,
            other => return Err(Error::Config(format!("unknown track {other:?}"))),
        };
        let speed = if name.starts_with("twisty") {
            SpeedProfile {
                base: 7.0,
                amplitude: 2.0,
                period_s: 5.0,
            }
        } else {
            TrackSpec::default().speed
        };
        Ok(TrackSpec {
            segments,
            speed,
            ..TrackSpec::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(format!("infeasible track: {m}")));
        if self.segments.is_empty() {
            return bad("no segments".into());
        }
        for (i, s) in self.segments.iter().enumerate() {
            if !(s.length.is_finite() && s.length > 0.0) {
                return bad(format!("segment {i} length {} must be positive", s.length));
            }
            if !s.curvature.is_finite() || (WHEELBASE_M * s.curvature).atan().abs() > MAX_STEER_RAD
            {
                return bad(format!(
                    "segment {i} curvature {} needs more than {MAX_STEER_RAD} rad of steering",
                    s.curvature
                ));
            }
            if s.curvature.abs() * (self.lane_offset.abs() + LANE_WIDTH) >= 1.0 {
                return bad(format!("segment {i} radius is inside the road"));
            }
        }
        let sp = &self.speed;
        if !(sp.base.is_finite()
            && sp.amplitude.is_finite()
            && sp.amplitude >= 0.0
            && sp.base - sp.amplitude > 0.0)
        {
            return bad("speed profile must stay positive".into());
        }
        if !(sp.period_s > 0.0 && self.fps > 0.0 && self.camera_height > 0.0) {
            return bad("period, fps and camera height must be positive".into());
        }
        if !(self.fov_deg > 1.0 && self.fov_deg < 170.0) || !(0.0..45.0).contains(&self.pitch_deg) {
            return bad("field of view must lie in (1, 170) and pitch in [0, 45) degrees".into());
        }
        if self.width < 8 || self.height < 8 {
            return bad(format!("image {}x{} below 8x8", self.width, self.height));
        }
        if !(0.0..=0.5).contains(&self.sensor_noise) {
            return bad("sensor_noise must lie in [0, 0.5]".into());
        }
        Ok(())
    }

    fn total_length(&self) -> f64 {
        self.segments.iter().map(|s| s.length).sum()
    }

    /// Curvature at arc length `s` (the segment list repeats).
    pub fn curvature_at(&self, s: f64) -> f64 {
        let mut r = s.rem_euclid(self.total_length());
        for sg in &self.segments {
            if r < sg.length {
                return sg.curvature;
            }
            r -= sg.length;
        }
        self.segments.last().expect("validated nonempty").curvature
    }
}

/// Bicycle-model steering label for curvature `k`.
pub fn steering_label(k: f64) -> f64 {
    (WHEELBASE_M * k).atan()
}

/// Per-frame ground truth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTruth {
    pub timestamp_ns: i64,
    pub distance: f64,
    pub curvature: f64,
    pub angle: f64,
    pub speed: f64,
}

pub fn track_truth(track: &TrackSpec, n_frames: usize) -> Vec<FrameTruth> {
    (0..n_frames)
        .map(|i| {
            let t = i as f64 / track.fps;
            let distance = track.speed.distance_at(t);
            let curvature = track.curvature_at(distance);
            FrameTruth {
                timestamp_ns: (i as f64 * 1e9 / track.fps).round() as i64,
                distance,
                curvature,
                angle: steering_label(curvature),
                speed: track.speed.speed_at(t),
            }
        })
        .collect()
}

fn hash01(seed: u64, ix: i64, iy: i64) -> f64 {
    let mut z = seed
        ^ (ix as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 31;
    (z >> 11) as f64 / (1u64 << 53) as f64
}

/// Smooth value noise in `[0, 1)` on a grid of `cell` metres.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (gx, gy) = (x / cell, y / cell);
    let (ix, iy) = (gx.floor(), gy.floor());
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let (fx, fy) = (smooth(gx - ix), smooth(gy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let a = hash01(seed, ix, iy);
    let b = hash01(seed, ix + 1, iy);
    let c = hash01(seed, ix, iy + 1);
    let d = hash01(seed, ix + 1, iy + 1);
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Centre line ahead of the car in the car frame (x forward, y left).
struct Centreline {
    points: Vec<(f64, f64, f64, f64)>, // x, y, heading, arc offset
}

impl Centreline {
    /// Integrates the centre line forwards and backwards from the car's pose
    /// (origin, heading 0), sampling curvature at each step's midpoint.
    fn new(track: &TrackSpec, s0: f64) -> Self {
        let ahead = (VIEW_DISTANCE * 1.5 / CENTRELINE_STEP) as usize;
        // a little ground behind the car so nearby pixels project cleanly
        let behind = (10.0 / CENTRELINE_STEP) as usize;
        let walk = |steps: usize, dir: f64| {
            let h = dir * CENTRELINE_STEP;
            let (mut x, mut y, mut th, mut sigma) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
            let mut pts = Vec::with_capacity(steps);
            for _ in 0..steps {
                let k = track.curvature_at(s0 + sigma + h / 2.0);
                let mid = th + k * h / 2.0;
                x += h * mid.cos();
                y += h * mid.sin();
                th += k * h;
                sigma += h;
                pts.push((x, y, th, sigma));
            }
            pts
        };
        let mut points: Vec<_> = walk(behind, -1.0).into_iter().rev().collect();
        points.push((0.0, 0.0, 0.0, 0.0));
        points.extend(walk(ahead, 1.0));
        Centreline { points }
    }

    /// (arc offset, signed lateral offset, left positive) of a ground point.
    fn road_coords(&self, px: f64, py: f64) -> (f64, f64) {
        let mut best = (f64::INFINITY, 0);
        for (i, &(x, y, _, _)) in self.points.iter().enumerate() {
            let d = (px - x).powi(2) + (py - y).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        let (x, y, th, sigma) = self.points[best.1];
        let (dx, dy) = (px - x, py - y);
        let (s, c) = th.sin_cos();
        (sigma + dx * c + dy * s, -dx * s + dy * c)
    }
}

fn ground_colour(seed: u64, s: f64, d: f64) -> [f64; 3] {
    let fine = value_noise(seed, s, d, 0.7) - 0.5;
    let coarse = value_noise(seed ^ 0x5151, s, d, 4.0) - 0.5;
    let edge = (d.abs() - LANE_WIDTH).abs() < LINE_HALF_WIDTH;
    let centre = d.abs() < LINE_HALF_WIDTH * 0.8 && s.rem_euclid(DASH_PERIOD) < DASH_ON;
    if d.abs() <= LANE_WIDTH + LINE_HALF_WIDTH {
        if edge || centre {
            return [0.92, 0.92, 0.88];
        }
        let g = 0.36 + 0.08 * fine + 0.05 * coarse;
        [g, g, g * 1.03]
    } else {
        let g = 0.5 + 0.25 * fine + 0.2 * coarse;
        [0.22 * g + 0.12, 0.45 * g + 0.2, 0.15 * g + 0.08]
    }
}

const HAZE: [f64; 3] = [0.72, 0.76, 0.82];

/// Renders the view from arc length `s0` (no sensor noise).
pub fn render_view(track: &TrackSpec, s0: f64) -> Result<Frame> {
    track.validate()?;
    let (w, h) = (track.width, track.height);
    let line = Centreline::new(track, s0);
    let f = (w as f64 / 2.0) / (track.fov_deg.to_radians() / 2.0).tan();
    let (sp, cp) = track.pitch_deg.to_radians().sin_cos();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    const SS: usize = 2;
    Frame::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for sy in 0..SS {
            for sx in 0..SS {
                let xn = (x as f64 + (sx as f64 + 0.5) / SS as f64 - cx) / f;
                let yn = (y as f64 + (sy as f64 + 0.5) / SS as f64 - cy) / f;
                let down = sp + yn * cp;
                let c = if down <= 1e-6 {
                    let t = (-down).clamp(0.0, 1.0);
                    [0.62 - 0.2 * t, 0.74 - 0.15 * t, 0.9 - 0.05 * t]
                } else {
                    let t = track.camera_height / down;
                    let fwd = t * (cp - yn * sp);
                    let left = -t * xn;
                    let dist = (fwd * fwd + left * left).sqrt();
                    let ground = if dist > VIEW_DISTANCE {
                        HAZE
                    } else {
                        let (s, d) = line.road_coords(fwd, track.lane_offset + left);
                        ground_colour(track.seed, s0 + s, d)
                    };
                    let fog = 1.0 - (-dist / 60.0).exp();
                    [0, 1, 2].map(|k| ground[k] * (1.0 - fog) + HAZE[k] * fog)
                };
                for k in 0..3 {
                    acc[k] += c[k];
                }
            }
        }
        acc.map(|a| a / (SS * SS) as f64)
    })
}

/// Renders `n_frames` PPMs into `out_dir/frames/` and writes
/// `out_dir/index.csv`. Deterministic for a given spec.
pub fn generate_synthetic(
    track: &TrackSpec,
    n_frames: usize,
    out_dir: impl AsRef<Path>,
) -> Result<DriveIndex> {
    track.validate()?;
    if n_frames < 2 {
        return Err(Error::contract(format!(
            "n_frames must be >= 2, got {n_frames}"
        )));
    }
    let out_dir = out_dir.as_ref();
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir)
        .map_err(|e| Error::io(format!("creating {}", frames_dir.display()), e))?;
    let mut rows = Vec::with_capacity(n_frames);
    for (i, truth) in track_truth(track, n_frames).into_iter().enumerate() {
        let mut frame = render_view(track, truth.distance)?;
        if track.sensor_noise > 0.0 {
            let mut rng = derive_rng(track.seed, &[0x5e45, i as u64]);
            let noisy: Vec<f64> = frame
                .pixels()
                .iter()
                .map(|&v| v + track.sensor_noise * (2.0 * rng.gen::<f64>() - 1.0))
                .collect();
            frame = Frame::new(frame.width(), frame.height(), noisy, truth.timestamp_ns)?;
        }
        let path = frames_dir.join(format!("frame_{i:06}.ppm"));
        write_ppm(&frame, &path)?;
        rows.push(IndexRow {
            timestamp: truth.timestamp_ns,
            camera: Camera::Center,
            path,
            angle: truth.angle,
            torque: 0.0,
            speed: truth.speed,
        });
    }
    let index = DriveIndex { rows };
    write_index(&index, out_dir.join("index.csv"))?;
    Ok(index)
}
