use super::Frame;
use crate::error::{Error, Result};

/// Bilinear sample of a single-channel plane with clamp-to-edge borders.
pub fn sample_plane(plane: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let top = plane[y0 * width + x0] * (1.0 - fx) + plane[y0 * width + x1] * fx;
    let bottom = plane[y1 * width + x0] * (1.0 - fx) + plane[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Bilinear sample of an interleaved RGB frame with clamp-to-edge borders.
pub fn sample_rgb(frame: &Frame, x: f64, y: f64) -> [f64; 3] {
    let (w, h) = (frame.width(), frame.height());
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (a, b, c, d) = (
        frame.pixel(x0, y0),
        frame.pixel(x1, y0),
        frame.pixel(x0, y1),
        frame.pixel(x1, y1),
    );
    let mut out = [0.0; 3];
    for k in 0..3 {
        let top = a[k] * (1.0 - fx) + b[k] * fx;
        let bottom = c[k] * (1.0 - fx) + d[k] * fx;
        out[k] = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Source coordinate of an output pixel centre (`align_corners = false`).
fn source_coord(dst: usize, in_len: usize, out_len: usize) -> f64 {
    (dst as f64 + 0.5) * in_len as f64 / out_len as f64 - 0.5
}

pub fn resize_bilinear(frame: &Frame, out_h: usize, out_w: usize) -> Result<Frame> {
    if out_h < 2 || out_w < 2 {
        return Err(Error::contract(format!(
            "resize target {out_h}x{out_w} must be at least 2x2"
        )));
    }
    if out_h == frame.height() && out_w == frame.width() {
        return Ok(frame.clone());
    }
    let mut out = Frame::from_fn(out_w, out_h, |x, y| {
        sample_rgb(
            frame,
            source_coord(x, frame.width(), out_w),
            source_coord(y, frame.height(), out_h),
        )
    })?;
    out.timestamp = frame.timestamp;
    Ok(out)
}

/// Resizes a single plane; used for flow pyramids.
pub fn resize_plane(plane: &[f64], w: usize, h: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let sy = source_coord(y, h, out_h);
        for x in 0..out_w {
            out.push(sample_plane(plane, w, h, source_coord(x, w, out_w), sy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let f = Frame::from_fn(5, 4, |x, y| [x as f64 / 5.0, y as f64 / 4.0, 0.3]).unwrap();
        assert_eq!(resize_bilinear(&f, 4, 5).unwrap(), f);
    }

    #[test]
    fn constant_stays_constant() {
        let f = Frame::filled(7, 3, [0.25, 0.5, 0.75]).unwrap();
        let r = resize_bilinear(&f, 11, 4).unwrap();
        for p in r.pixels().chunks(3) {
            assert!(
                (p[0] - 0.25).abs() < 1e-15
                    && (p[1] - 0.5).abs() < 1e-15
                    && (p[2] - 0.75).abs() < 1e-15
            );
        }
    }

    #[test]
    fn checkerboard_centre_is_half() {
        let f = Frame::from_fn(2, 2, |x, y| {
            let v = ((x + y) % 2) as f64;
            [v, v, v]
        })
        .unwrap();
        let r = resize_bilinear(&f, 3, 3).unwrap();
        assert!((r.pixel(1, 1)[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_tiny_target() {
        let f = Frame::filled(4, 4, [0.0; 3]).unwrap();
        assert!(resize_bilinear(&f, 1, 4).is_err());
    }
}
