use rand::Rng;

use super::color::{hsv_to_rgb, rgb_to_hsv};
use super::resize::sample_rgb;
use super::Frame;
use crate::error::{Error, Result};

/// Weak photometric + geometric augmentation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPolicy {
    /// Multiplicative factor interval on the HSV value channel.
    pub brightness_range: (f64, f64),
    pub shadow_prob: f64,
    pub shadow_dim: f64,
    pub translate_x_px: u32,
    pub translate_y_px: u32,
    pub rotate_deg: f64,
    /// Odd box size; 1 disables blurring.
    pub blur_kernel: usize,
    pub blur_prob: f64,
    /// Steering correction per pixel of horizontal shift (0 = label kept).
    pub translate_label_per_px: f64,
    pub seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            brightness_range: (0.7, 1.2),
            shadow_prob: 0.3,
            shadow_dim: 0.5,
            translate_x_px: 10,
            translate_y_px: 10,
            rotate_deg: 5.0,
            blur_kernel: 3,
            blur_prob: 0.3,
            translate_label_per_px: 0.0,
            seed: 0,
        }
    }
}

impl AugmentPolicy {
    /// A policy whose every draw is the identity.
    pub fn identity() -> Self {
        AugmentPolicy {
            brightness_range: (1.0, 1.0),
            shadow_prob: 0.0,
            shadow_dim: 0.5,
            translate_x_px: 0,
            translate_y_px: 0,
            rotate_deg: 0.0,
            blur_kernel: 1,
            blur_prob: 0.0,
            translate_label_per_px: 0.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.brightness_range;
        let bad = |m: String| Err(Error::Config(m));
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!(
                "brightness range ({lo}, {hi}) must satisfy 0 < lo <= hi"
            ));
        }
        if !(0.0..=1.0).contains(&self.shadow_prob) || !(0.0..=1.0).contains(&self.blur_prob) {
            return bad("shadow_prob and blur_prob must lie in [0, 1]".into());
        }
        if !(self.shadow_dim > 0.0 && self.shadow_dim < 1.0) {
            return bad(format!("shadow_dim {} must lie in (0, 1)", self.shadow_dim));
        }
        if !(0.0..=10.0).contains(&self.rotate_deg) {
            return bad(format!(
                "rotate_deg {} must lie in [0, 10]",
                self.rotate_deg
            ));
        }
        if self.blur_kernel == 0 || self.blur_kernel.is_multiple_of(2) {
            return bad(format!("blur_kernel {} must be odd", self.blur_kernel));
        }
        if self.translate_x_px > 10 || self.translate_y_px > 10 {
            log::warn!(
                "translation of up to {}x{} px is outside the weak (<= 10 px) regime",
                self.translate_x_px,
                self.translate_y_px
            );
        }
        Ok(())
    }
}

/// Draws of one augmentation pass; all zero/identity means a no-op.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentDraw {
    pub brightness: f64,
    /// Chord from (top_x, 0) to (bottom_x, H) and which side is darkened.
    pub shadow: Option<(f64, f64, bool)>,
    pub shift: (i64, i64),
    pub rotate_deg: f64,
    pub blur: bool,
}

impl AugmentDraw {
    pub fn sample<R: Rng + ?Sized>(policy: &AugmentPolicy, width: usize, rng: &mut R) -> Self {
        let (lo, hi) = policy.brightness_range;
        // Every draw is consumed unconditionally so streams stay aligned.
        let brightness = lo + (hi - lo) * rng.gen::<f64>();
        let shadow_roll = rng.gen::<f64>();
        let top = rng.gen::<f64>() * width as f64;
        let bottom = rng.gen::<f64>() * width as f64;
        let side = rng.gen::<bool>();
        let tx = policy.translate_x_px as i64;
        let ty = policy.translate_y_px as i64;
        let dx = rng.gen_range(-tx..=tx);
        let dy = rng.gen_range(-ty..=ty);
        let rot = (2.0 * rng.gen::<f64>() - 1.0) * policy.rotate_deg;
        let blur_roll = rng.gen::<f64>();
        AugmentDraw {
            brightness,
            shadow: (shadow_roll < policy.shadow_prob).then_some((top, bottom, side)),
            shift: (dx, dy),
            rotate_deg: rot,
            blur: policy.blur_kernel > 1 && blur_roll < policy.blur_prob,
        }
    }
}

pub fn adjust_brightness(frame: &Frame, factor: f64) -> Frame {
    let mut out = frame.clone();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let [h, s, v] = rgb_to_hsv(frame.pixel(x, y));
            out.set_pixel(x, y, hsv_to_rgb([h, s, (v * factor).min(1.0)]));
        }
    }
    out
}

pub fn cast_shadow(frame: &Frame, top_x: f64, bottom_x: f64, left_side: bool, dim: f64) -> Frame {
    let mut out = frame.clone();
    let h = frame.height() as f64;
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let cross = (bottom_x - top_x) * py - h * (px - top_x);
            if (cross > 0.0) == left_side {
                let p = frame.pixel(x, y);
                out.set_pixel(x, y, [p[0] * dim, p[1] * dim, p[2] * dim]);
            }
        }
    }
    out
}

/// Integer shift with edge replication; positive `dx` moves content right.
pub fn translate(frame: &Frame, dx: i64, dy: i64) -> Frame {
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let mut out = frame.clone();
    for y in 0..h {
        for x in 0..w {
            let sx = (x - dx).clamp(0, w - 1) as usize;
            let sy = (y - dy).clamp(0, h - 1) as usize;
            out.set_pixel(x as usize, y as usize, frame.pixel(sx, sy));
        }
    }
    out
}

/// Rotation about the image centre, bilinear resampling, clamped borders.
pub fn rotate(frame: &Frame, degrees: f64) -> Frame {
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (frame.width() as f64 - 1.0) / 2.0;
    let cy = (frame.height() as f64 - 1.0) / 2.0;
    let mut out = frame.clone();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let (rx, ry) = (x as f64 - cx, y as f64 - cy);
            let sx = c * rx + s * ry + cx;
            let sy = -s * rx + c * ry + cy;
            out.set_pixel(x, y, sample_rgb(frame, sx, sy));
        }
    }
    out
}

pub fn box_blur(frame: &Frame, kernel: usize) -> Frame {
    let r = (kernel / 2) as i64;
    let (w, h) = (frame.width() as i64, frame.height() as i64);
    let norm = (kernel * kernel) as f64;
    let mut out = frame.clone();
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0.0; 3];
            for dy in -r..=r {
                for dx in -r..=r {
                    let p = frame.pixel(
                        (x + dx).clamp(0, w - 1) as usize,
                        (y + dy).clamp(0, h - 1) as usize,
                    );
                    for k in 0..3 {
                        acc[k] += p[k];
                    }
                }
            }
            out.set_pixel(x as usize, y as usize, acc.map(|a| a / norm));
        }
    }
    out
}

/// Applies one already-sampled draw.
pub fn apply_draw(
    frame: &Frame,
    label_angle: f64,
    draw: &AugmentDraw,
    policy: &AugmentPolicy,
) -> (Frame, f64) {
    let mut out = frame.clone();
    if draw.brightness != 1.0 {
        out = adjust_brightness(&out, draw.brightness);
    }
    if let Some((top, bottom, side)) = draw.shadow {
        out = cast_shadow(&out, top, bottom, side, policy.shadow_dim);
    }
    if draw.shift != (0, 0) {
        out = translate(&out, draw.shift.0, draw.shift.1);
    }
    if draw.rotate_deg != 0.0 {
        out = rotate(&out, draw.rotate_deg);
    }
    if draw.blur {
        out = box_blur(&out, policy.blur_kernel);
    }
    let angle = label_angle + policy.translate_label_per_px * draw.shift.0 as f64;
    (out, angle)
}

/// Random augmentation of one frame; deterministic for a given `rng` state.
pub fn augment<R: Rng + ?Sized>(
    frame: &Frame,
    label_angle: f64,
    policy: &AugmentPolicy,
    rng: &mut R,
) -> Result<(Frame, f64)> {
    policy.validate()?;
    let draw = AugmentDraw::sample(policy, frame.width(), rng);
    Ok(apply_draw(frame, label_angle, &draw, policy))
}
