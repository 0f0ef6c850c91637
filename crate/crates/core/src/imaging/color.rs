use std::f64::consts::TAU;

use super::{FlowField, Frame};
use crate::error::{Error, Result};

/// RGB in `[0,1]` to (hue degrees in `[0,360)`, saturation, value).
pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> [f64; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue, sat, max]
}

pub fn hsv_to_rgb([h, s, v]: [f64; 3]) -> [f64; 3] {
    let h = h.rem_euclid(360.0);
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Hue in degrees of the flow direction `atan2(v, u)` mapped onto `[0, 360)`.
pub fn flow_hue(u: f64, v: f64) -> f64 {
    v.atan2(u).rem_euclid(TAU).to_degrees()
}

/// Polar color coding of a flow field: direction to hue, magnitude (capped
/// at `mag_cap`) to value, full saturation.
pub fn encode_flow_hsv(flow: &FlowField, mag_cap: f64) -> Result<Frame> {
    if mag_cap.is_nan() || mag_cap <= 0.0 {
        return Err(Error::contract(format!(
            "mag_cap must be > 0, got {mag_cap}"
        )));
    }
    let mut pixels = Vec::with_capacity(flow.u.len() * 3);
    for (&u, &v) in flow.u.iter().zip(&flow.v) {
        let value = ((u * u + v * v).sqrt() / mag_cap).min(1.0);
        pixels.extend_from_slice(&hsv_to_rgb([flow_hue(u, v), 1.0, value]));
    }
    Frame::new(flow.width(), flow.height(), pixels, 0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: [f64; 3], b: [f64; 3]) -> bool {
        a.iter().zip(&b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    /// Piecewise-linear HSV definition evaluated channel by channel.
    fn hsv_oracle(h: f64, s: f64, v: f64) -> [f64; 3] {
        let f = |n: f64| {
            let k = (n + h / 60.0) % 6.0;
            v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
        };
        [f(5.0), f(3.0), f(1.0)]
    }

    #[test]
    fn zero_flow_is_black() {
        let f = encode_flow_hsv(&FlowField::zeros(3, 2), 10.0).unwrap();
        assert!(f.pixels().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn rightward_is_red_downward_is_chartreuse() {
        let f = encode_flow_hsv(&FlowField::constant(1, 1, 10.0, 0.0), 10.0).unwrap();
        assert!(close(f.pixel(0, 0), [1.0, 0.0, 0.0]));
        let f = encode_flow_hsv(&FlowField::constant(1, 1, 0.0, 10.0), 10.0).unwrap();
        assert!(close(f.pixel(0, 0), hsv_oracle(90.0, 1.0, 1.0)));
        assert!(close(f.pixel(0, 0), [0.5, 1.0, 0.0]));
    }

    #[test]
    fn conversion_matches_alternate_formula() {
        for i in 0..72 {
            let h = i as f64 * 5.0 + 0.3;
            for &(s, v) in &[(1.0, 1.0), (0.4, 0.7), (0.0, 0.5)] {
                assert!(close(hsv_to_rgb([h, s, v]), hsv_oracle(h, s, v)), "h={h}");
            }
        }
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [
            [0.2, 0.5, 0.9],
            [0.9, 0.1, 0.1],
            [0.3, 0.3, 0.3],
            [0.0, 0.6, 0.2],
        ] {
            assert!(close(hsv_to_rgb(rgb_to_hsv(rgb)), rgb));
        }
    }

    #[test]
    fn bad_cap_rejected() {
        assert!(encode_flow_hsv(&FlowField::zeros(1, 1), 0.0).is_err());
    }
}
