use steer_core::imaging::color::{flow_hue, rgb_to_hsv};
use steer_core::imaging::flow::{compute_dense_flow, FlowParams};
use steer_core::imaging::{encode_flow_hsv, FlowField, Frame};

/// Smooth analytic texture; `shift` moves content by (dx, dy) pixels.
fn smooth_image(size: usize, dx: f64, dy: f64) -> Frame {
    let tau = std::f64::consts::TAU;
    Frame::from_fn(size, size, |x, y| {
        let (x, y) = (x as f64 - dx, y as f64 - dy);
        let l = 0.5
            + 0.2 * (tau * x / 23.0 + 0.7).sin() * (tau * y / 19.0).cos()
            + 0.15 * (tau * (x + y) / 31.0).sin()
            + 0.08 * (tau * (x - 2.0 * y) / 41.0 + 1.3).cos();
        [l, l, l]
    })
    .unwrap()
}

fn interior_mean(flow: &FlowField, margin: usize) -> (f64, f64, f64) {
    let (w, h) = (flow.width(), flow.height());
    let (mut su, mut sv, mut sav, mut n) = (0.0, 0.0, 0.0, 0.0);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let i = y * w + x;
            su += flow.u[i];
            sv += flow.v[i];
            sav += flow.v[i].abs();
            n += 1.0;
        }
    }
    (su / n, sv / n, sav / n)
}

#[test]
fn identical_frames_give_zero_flow() {
    let f = smooth_image(48, 0.0, 0.0);
    let flow = compute_dense_flow(&f, &f, &FlowParams::default()).unwrap();
    assert!(flow.max_abs() < 1e-6);
}

#[test]
fn recovers_translations_up_to_four_pixels() {
    let base = smooth_image(64, 0.0, 0.0);
    for (dx, dy) in [
        (3.0, 1.0),
        (-2.0, 0.0),
        (4.0, -4.0),
        (0.0, 2.5),
        (-4.0, 3.0),
        (1.0, 1.0),
    ] {
        let next = smooth_image(64, dx, dy);
        let flow = compute_dense_flow(&base, &next, &FlowParams::default()).unwrap();
        let (mu, mv, mabs_v) = interior_mean(&flow, 10);
        assert!((mu - dx).abs() < 0.3, "shift ({dx},{dy}): mean u {mu}");
        assert!((mv - dy).abs() < 0.3, "shift ({dx},{dy}): mean v {mv}");
        if dy == 0.0 {
            assert!(mabs_v < 0.3, "mean |v| {mabs_v}");
        }
    }
}

#[test]
fn hue_rotates_with_flow_and_value_scales_with_magnitude() {
    let cap = 10.0;
    for k in 0..12 {
        let base = 0.3 + k as f64 * 0.5;
        let theta: f64 = 0.4;
        let (u, v) = (3.0 * base.cos(), 3.0 * base.sin());
        let (ru, rv) = (
            u * theta.cos() - v * theta.sin(),
            u * theta.sin() + v * theta.cos(),
        );
        let h0 = flow_hue(u, v);
        let h1 = flow_hue(ru, rv);
        let diff = (h1 - h0).rem_euclid(360.0);
        assert!((diff - theta.to_degrees()).abs() < 1e-9, "{diff}");

        let f1 = encode_flow_hsv(&FlowField::constant(1, 1, u, v), cap).unwrap();
        let f2 = encode_flow_hsv(&FlowField::constant(1, 1, 2.0 * u, 2.0 * v), cap).unwrap();
        let v1 = rgb_to_hsv(f1.pixel(0, 0))[2];
        let v2 = rgb_to_hsv(f2.pixel(0, 0))[2];
        assert!((v2 - 2.0 * v1).abs() < 1e-12);
    }
}
