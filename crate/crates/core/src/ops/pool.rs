//! Spatial resampling: average-pool downsampling, bilinear upsampling and
//! global average pooling. All operate on the trailing `[H,W]` axes and
//! treat every leading index as an independent plane.

use crate::autodiff::tape::Op;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::pairwise_sum_by;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PlaneGeom {
    pub planes: usize,
    pub h: usize,
    pub w: usize,
}

impl PlaneGeom {
    pub fn len(&self) -> usize {
        self.planes * self.h * self.w
    }
}

fn plane_geom(layer: &str, shape: &[usize]) -> Result<PlaneGeom> {
    if shape.len() < 3 {
        return Err(Error::shape(layer, format!("expected [...,C,H,W], got {shape:?}")));
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    Ok(PlaneGeom {
        planes: shape[..shape.len() - 2].iter().product(),
        h,
        w,
    })
}

pub(crate) fn avg_pool2d_forward(g: &PlaneGeom, f: usize, x: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.h / f, g.w / f);
    let inv = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; g.planes * ho * wo];
    for p in 0..g.planes {
        let plane = &x[p * g.h * g.w..][..g.h * g.w];
        for oy in 0..ho {
            for ox in 0..wo {
                let at = |i: usize| plane[(oy * f + i / f) * g.w + ox * f + i % f];
                out[(p * ho + oy) * wo + ox] = pairwise_sum_by(f * f, &at) * inv;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2d_backward(g: &PlaneGeom, f: usize, grad: &[f64], dx: &mut [f64]) {
    let (ho, wo) = (g.h / f, g.w / f);
    let inv = 1.0 / (f * f) as f64;
    for p in 0..g.planes {
        for y in 0..g.h {
            for x in 0..g.w {
                dx[(p * g.h + y) * g.w + x] += grad[(p * ho + y / f) * wo + x / f] * inv;
            }
        }
    }
}

/// Per destination index: (lower source, upper source, upper weight), using
/// half-pixel centres `src = (dst + 0.5) / factor - 0.5` clamped to the
/// valid range.
pub(crate) fn bilinear_taps(src_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..src_len * factor)
        .map(|dst| {
            let s = ((dst as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src_len - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub(crate) fn upsample_bilinear_forward(g: &PlaneGeom, f: usize, x: &[f64]) -> Vec<f64> {
    let (ho, wo) = (g.h * f, g.w * f);
    let ty = bilinear_taps(g.h, f);
    let tx = bilinear_taps(g.w, f);
    let mut out = vec![0.0; g.planes * ho * wo];
    for p in 0..g.planes {
        let plane = &x[p * g.h * g.w..][..g.h * g.w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                // Lerp form keeps constant planes exactly constant.
                let a = plane[y0 * g.w + x0];
                let b = plane[y0 * g.w + x1];
                let c = plane[y1 * g.w + x0];
                let d = plane[y1 * g.w + x1];
                let top = a + wx * (b - a);
                let bot = c + wx * (d - c);
                out[(p * ho + oy) * wo + ox] = top + wy * (bot - top);
            }
        }
    }
    out
}

pub(crate) fn upsample_bilinear_backward(g: &PlaneGeom, f: usize, grad: &[f64], dx: &mut [f64]) {
    let (ho, wo) = (g.h * f, g.w * f);
    let ty = bilinear_taps(g.h, f);
    let tx = bilinear_taps(g.w, f);
    for p in 0..g.planes {
        let plane = &mut dx[p * g.h * g.w..][..g.h * g.w];
        for (oy, &(y0, y1, wy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in tx.iter().enumerate() {
                let gv = grad[(p * ho + oy) * wo + ox];
                plane[y0 * g.w + x0] += gv * (1.0 - wy) * (1.0 - wx);
                plane[y0 * g.w + x1] += gv * (1.0 - wy) * wx;
                plane[y1 * g.w + x0] += gv * wy * (1.0 - wx);
                plane[y1 * g.w + x1] += gv * wy * wx;
            }
        }
    }
}

impl Tape {
    /// Mean over non-overlapping `factor×factor` blocks.
    pub fn avg_pool2d(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let g = plane_geom("avg_pool2d", &shape)?;
        if factor == 0 || g.h % factor != 0 || g.w % factor != 0 {
            return Err(Error::shape(
                "avg_pool2d",
                format!("{}x{} not divisible by factor {factor}", g.h, g.w),
            ));
        }
        let out = avg_pool2d_forward(&g, factor, self.value(x).data());
        let mut out_shape = shape;
        let r = out_shape.len();
        out_shape[r - 2] /= factor;
        out_shape[r - 1] /= factor;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            &[x],
            Op::AvgPool2d { x, geom: g, factor },
        ))
    }

    /// Bilinear upsampling with half-pixel alignment.
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let g = plane_geom("upsample_bilinear", &shape)?;
        if factor == 0 {
            return Err(Error::shape("upsample_bilinear", "factor must be positive"));
        }
        let out = upsample_bilinear_forward(&g, factor, self.value(x).data());
        let mut out_shape = shape;
        let r = out_shape.len();
        out_shape[r - 2] *= factor;
        out_shape[r - 1] *= factor;
        Ok(self.push(
            Tensor::from_parts(out_shape, out),
            &[x],
            Op::Upsample { x, geom: g, factor },
        ))
    }

    /// `[...,C,H,W]` → `[...,C]`, mean over each spatial plane.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let g = plane_geom("global_avg_pool", &shape)?;
        let plane = g.h * g.w;
        let data = self.value(x).data();
        let inv = 1.0 / plane as f64;
        let out: Vec<f64> = data
            .chunks(plane)
            .map(|c| pairwise_sum_by(plane, &|i| c[i]) * inv)
            .collect();
        Ok(self.push(
            Tensor::from_parts(shape[..shape.len() - 2].to_vec(), out),
            &[x],
            Op::GlobalAvgPool { x, plane },
        ))
    }
}
