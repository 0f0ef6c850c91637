//! Coarse-to-fine Horn–Schunck optical flow.
//!
//! Luminance is scaled to `[0, 255]` so that the smoothness weight `alpha`
//! has its customary magnitude. Each pyramid level warps the second image by
//! the current estimate and solves the linearised brightness-constancy +
//! smoothness problem with Jacobi iterations.

use super::resize::{resize_plane, sample_plane};
use super::{FlowField, Frame};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    pub levels: usize,
    pub iters: usize,
    pub alpha: f64,
    /// Re-linearisations per pyramid level.
    pub warps: usize,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            levels: 3,
            iters: 50,
            alpha: 15.0,
            warps: 2,
        }
    }
}

impl FlowParams {
    pub fn describe(&self) -> String {
        format!(
            "hs:levels={},iters={},alpha={},warps={}",
            self.levels, self.iters, self.alpha, self.warps
        )
    }
}

const MIN_LEVEL_SIZE: usize = 8;

struct Plane {
    w: usize,
    h: usize,
    data: Vec<f64>,
}

impl Plane {
    fn at(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.data[y * self.w + x]
    }

    /// 3-tap binomial blur then half-size resample.
    fn downsample(&self) -> Plane {
        let mut blurred = vec![0.0; self.data.len()];
        for y in 0..self.h as isize {
            for x in 0..self.w as isize {
                let mut s = 0.0;
                for (dy, wy) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                    for (dx, wx) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
                        s += wy * wx * self.at(x + dx, y + dy);
                    }
                }
                blurred[y as usize * self.w + x as usize] = s / 16.0;
            }
        }
        let (w2, h2) = (self.w.div_ceil(2), self.h.div_ceil(2));
        Plane {
            w: w2,
            h: h2,
            data: resize_plane(&blurred, self.w, self.h, w2, h2),
        }
    }
}

fn pyramid(base: Plane, levels: usize) -> Vec<Plane> {
    let mut out = vec![base];
    while out.len() < levels.max(1) {
        let last = out.last().expect("non-empty");
        if last.w.div_ceil(2) < MIN_LEVEL_SIZE || last.h.div_ceil(2) < MIN_LEVEL_SIZE {
            break;
        }
        let next = last.downsample();
        out.push(next);
    }
    out
}

/// Horn–Schunck neighbourhood average (1/6 edge, 1/12 corner neighbours).
fn neighbour_mean(p: &[f64], w: usize, h: usize, out: &mut [f64]) {
    let at = |x: isize, y: isize| {
        p[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let edge = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1);
            let corner = at(x - 1, y - 1) + at(x + 1, y - 1) + at(x - 1, y + 1) + at(x + 1, y + 1);
            out[y as usize * w + x as usize] = edge / 6.0 + corner / 12.0;
        }
    }
}

fn refine_level(i0: &Plane, i1: &Plane, u: &mut [f64], v: &mut [f64], params: &FlowParams) {
    let (w, h) = (i0.w, i0.h);
    let n = w * h;
    let alpha2 = params.alpha * params.alpha;
    let mut ubar = vec![0.0; n];
    let mut vbar = vec![0.0; n];
    for _ in 0..params.warps.max(1) {
        let warped = Plane {
            w,
            h,
            data: (0..n)
                .map(|i| {
                    let (x, y) = ((i % w) as f64, (i / w) as f64);
                    sample_plane(&i1.data, w, h, x + u[i], y + v[i])
                })
                .collect(),
        };
        let mut ix = vec![0.0; n];
        let mut iy = vec![0.0; n];
        let mut it = vec![0.0; n];
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = y as usize * w + x as usize;
                let gx = 0.5 * (i0.at(x + 1, y) - i0.at(x - 1, y))
                    + 0.5 * (warped.at(x + 1, y) - warped.at(x - 1, y));
                let gy = 0.5 * (i0.at(x, y + 1) - i0.at(x, y - 1))
                    + 0.5 * (warped.at(x, y + 1) - warped.at(x, y - 1));
                ix[i] = 0.5 * gx;
                iy[i] = 0.5 * gy;
                it[i] = warped.data[i] - i0.data[i];
            }
        }
        let u0 = u.to_vec();
        let v0 = v.to_vec();
        for _ in 0..params.iters {
            neighbour_mean(u, w, h, &mut ubar);
            neighbour_mean(v, w, h, &mut vbar);
            for i in 0..n {
                let r = ix[i] * (ubar[i] - u0[i]) + iy[i] * (vbar[i] - v0[i]) + it[i];
                let k = r / (alpha2 + ix[i] * ix[i] + iy[i] * iy[i]);
                u[i] = ubar[i] - ix[i] * k;
                v[i] = vbar[i] - iy[i] * k;
            }
        }
    }
}

/// Dense flow from `prev` to `next`: `next(x + u, y + v) ≈ prev(x, y)`.
pub fn compute_dense_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField> {
    if !prev.same_size(next) {
        return Err(Error::dim(format!(
            "flow frames differ in size: {}x{} vs {}x{}",
            prev.width(),
            prev.height(),
            next.width(),
            next.height()
        )));
    }
    let (w, h) = (prev.width(), prev.height());
    let to_plane = |f: &Frame| Plane {
        w,
        h,
        data: f.luminance().into_iter().map(|l| l * 255.0).collect(),
    };
    let p0 = pyramid(to_plane(prev), params.levels);
    let p1 = pyramid(to_plane(next), params.levels);

    let coarsest = p0.len() - 1;
    let mut u = vec![0.0; p0[coarsest].w * p0[coarsest].h];
    let mut v = u.clone();
    for level in (0..=coarsest).rev() {
        let (lw, lh) = (p0[level].w, p0[level].h);
        if level != coarsest {
            let (pw, ph) = (p0[level + 1].w, p0[level + 1].h);
            let sx = lw as f64 / pw as f64;
            let sy = lh as f64 / ph as f64;
            u = resize_plane(&u, pw, ph, lw, lh)
                .into_iter()
                .map(|x| x * sx)
                .collect();
            v = resize_plane(&v, pw, ph, lw, lh)
                .into_iter()
                .map(|x| x * sy)
                .collect();
        }
        refine_level(&p0[level], &p1[level], &mut u, &mut v, params);
    }
    FlowField::new(w, h, u, v)
}

/// Pixelwise convex combination of `flows`. Weights that do not sum to one
/// are renormalised with a warning.
pub fn weighted_flow_average(flows: &[FlowField], weights: &[f64]) -> Result<FlowField> {
    let first = flows
        .first()
        .ok_or_else(|| Error::contract("weighted_flow_average of zero flows"))?;
    if flows.len() != weights.len() {
        return Err(Error::contract(format!(
            "{} flows but {} weights",
            flows.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
        return Err(Error::contract(
            "flow weights must be finite and nonnegative",
        ));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::contract("flow weights sum to zero"));
    }
    if (total - 1.0).abs() > 1e-9 {
        log::warn!("flow weights sum to {total}; renormalising");
    }
    let mut out = FlowField::zeros(first.width(), first.height());
    for (f, &wt) in flows.iter().zip(weights) {
        if f.width() != first.width() || f.height() != first.height() {
            return Err(Error::dim("flow fields in average differ in size"));
        }
        let k = wt / total;
        for (o, x) in out.u.iter_mut().zip(&f.u) {
            *o += k * x;
        }
        for (o, x) in out.v.iter_mut().zip(&f.v) {
            *o += k * x;
        }
    }
    Ok(out)
}

/// Default exponential weights `w_j ∝ 0.5^j`, `j = 0` being the most recent.
pub fn exponential_weights(k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|j| 0.5f64.powi(j as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_linearity() {
        let a = FlowField::constant(4, 3, 1.0, 0.0);
        let b = FlowField::constant(4, 3, 3.0, 0.0);
        let m = weighted_flow_average(&[a.clone(), b], &[0.25, 0.75]).unwrap();
        assert!(m.u.iter().all(|&x| (x - 2.5).abs() < 1e-15));
        assert!(m.v.iter().all(|&x| x == 0.0));
        assert_eq!(
            weighted_flow_average(std::slice::from_ref(&a), &[1.0]).unwrap(),
            a
        );
        let same = weighted_flow_average(&[a.clone(), a.clone()], &[0.9, 0.1]).unwrap();
        assert!(same.u.iter().zip(&a.u).all(|(x, y)| (x - y).abs() < 1e-15));
    }

    #[test]
    fn average_renormalises_and_rejects_empty() {
        let a = FlowField::constant(2, 2, 1.0, 2.0);
        let b = FlowField::constant(2, 2, 3.0, 4.0);
        let m = weighted_flow_average(&[a, b], &[1.0, 1.0]).unwrap();
        assert!((m.u[0] - 2.0).abs() < 1e-15 && (m.v[0] - 3.0).abs() < 1e-15);
        assert!(matches!(
            weighted_flow_average(&[], &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn exponential_weights_halve() {
        let w = exponential_weights(3);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!((w[0] / w[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn size_mismatch() {
        let a = Frame::filled(8, 8, [0.5; 3]).unwrap();
        let b = Frame::filled(9, 8, [0.5; 3]).unwrap();
        assert!(matches!(
            compute_dense_flow(&a, &b, &FlowParams::default()),
            Err(Error::Dimension(_))
        ));
    }
}
