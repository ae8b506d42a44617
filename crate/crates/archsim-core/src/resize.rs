//! Bilinear image resizing for resolution reconciliation between models.
//!
//! Sample positions follow the half-pixel convention: source coordinate
//! `s = (d + 0.5) * in/out - 0.5`, clamped to the valid range, with the four
//! neighbors blended by their fractional offsets. Resizing to the input
//! resolution returns an identical copy.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Resizes an `(N, H, W, C)` batch to `(N, out_h, out_w, C)`.
pub fn bilinear_resize(images: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let shape = images.shape();
    if shape.len() != 4 {
        return Err(Error::Config(format!("resize expects (N,H,W,C), got {shape:?}")));
    }
    let (n, h, w, c) = (shape[0], shape[1], shape[2], shape[3]);
    if out_h == 0 || out_w == 0 {
        return Err(Error::Config("resize target must be positive".into()));
    }
    if out_h == h && out_w == w {
        return Ok(images.clone());
    }
    let scale_y = h as f32 / out_h as f32;
    let scale_x = w as f32 / out_w as f32;
    let mut out = vec![0.0f32; n * out_h * out_w * c];
    for s in 0..n {
        let src = images.sample(s);
        let dst = &mut out[s * out_h * out_w * c..(s + 1) * out_h * out_w * c];
        for oy in 0..out_h {
            let sy = ((oy as f32 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f32;
            for ox in 0..out_w {
                let sx = ((ox as f32 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f32;
                let base = (oy * out_w + ox) * c;
                for ch in 0..c {
                    let p00 = src[(y0 * w + x0) * c + ch];
                    let p01 = src[(y0 * w + x1) * c + ch];
                    let p10 = src[(y1 * w + x0) * c + ch];
                    let p11 = src[(y1 * w + x1) * c + ch];
                    let top = p00 + (p01 - p00) * fx;
                    let bot = p10 + (p11 - p10) * fx;
                    dst[base + ch] = top + (bot - top) * fy;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, out_h, out_w, c], out))
}

/// Returns the batch resized to `(h, w)`, or an identical copy when it
/// already matches.
pub fn to_resolution(images: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    bilinear_resize(images, h, w)
}
