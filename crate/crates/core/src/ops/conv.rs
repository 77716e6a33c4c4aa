//! 2D cross-correlation via im2col + gemm.
//!
//! Inputs are `[C,H,W]` or `[N,C,H,W]`; a batch is lowered into one wide
//! column matrix so the whole batch runs as a single product.

use crate::autodiff::tape::Op;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::linalg::gemm;
use crate::params::{uniform, Bound, ParamStore, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }
}

/// Output extent of a convolution along one axis, `None` when not even one
/// output position fits.
pub fn output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    (stride > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Columns `[K, N·P]`: row `(c·kh + i)·kw + j`, column `n·P + oy·wo + ox`.
fn im2col(g: &ConvGeom, x: &[f64]) -> Vec<f64> {
    let (p, np) = (g.p(), g.n * g.p());
    let mut cols = vec![0.0; g.k() * np];
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &x[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let row = (c * g.kh + i) * g.kw + j;
                    let dst = &mut cols[row * np + n * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + i) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w..][..g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[oy * g.wo + ox] = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_acc(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let (p, np) = (g.p(), g.n * g.p());
    for n in 0..g.n {
        for c in 0..g.c {
            let plane = &mut dx[(n * g.c + c) * g.h * g.w..][..g.h * g.w];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let row = (c * g.kh + i) * g.kw + j;
                    let src = &cols[row * np + n * p..][..p];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + i) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * g.w..][..g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst[ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[O, N·P]` → `[N, O, P]`, or the reverse when `to_batch_major` is false.
fn swap_batch(g: &ConvGeom, src: &[f64], to_batch_major: bool) -> Vec<f64> {
    if g.n == 1 {
        return src.to_vec();
    }
    let (p, np) = (g.p(), g.n * g.p());
    let mut out = vec![0.0; src.len()];
    for n in 0..g.n {
        for o in 0..g.o {
            let wide = o * np + n * p;
            let batch = (n * g.o + o) * p;
            if to_batch_major {
                out[batch..batch + p].copy_from_slice(&src[wide..wide + p]);
            } else {
                out[wide..wide + p].copy_from_slice(&src[batch..batch + p]);
            }
        }
    }
    out
}

pub(crate) fn forward(g: &ConvGeom, x: &[f64], w: &[f64], b: &[f64]) -> Vec<f64> {
    let cols = im2col(g, x);
    let np = g.n * g.p();
    let mut wide = vec![0.0; g.o * np];
    gemm(g.o, g.k(), np, w, false, &cols, false, 0.0, &mut wide);
    let mut out = swap_batch(g, &wide, true);
    let p = g.p();
    for (chunk, idx) in out.chunks_mut(p).zip(0..) {
        let bias = b[idx % g.o];
        for v in chunk {
            *v += bias;
        }
    }
    out
}

pub(crate) fn backward(
    g: &ConvGeom,
    x: &[f64],
    w: &[f64],
    grad_out: &[f64],
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let np = g.n * g.p();
    let gw = swap_batch(g, grad_out, false);
    if let Some(db) = db {
        for (o, d) in db.iter_mut().enumerate() {
            *d += gw[o * np..(o + 1) * np].iter().sum::<f64>();
        }
    }
    if dw.is_none() && dx.is_none() {
        return;
    }
    if let Some(dw) = dw {
        let cols = im2col(g, x);
        // dW[O,K] += G[O,NP] · colsᵀ
        gemm(g.o, np, g.k(), &gw, false, &cols, true, 1.0, dw);
    }
    if let Some(dx) = dx {
        let mut dcols = vec![0.0; g.k() * np];
        // dcols[K,NP] = Wᵀ · G
        gemm(g.k(), g.o, np, w, true, &gw, false, 0.0, &mut dcols);
        col2im_acc(g, &dcols, dx);
    }
}

/// One convolution layer. Parameters live in a [`ParamStore`] under
/// `{name}.weight` `[out, in, kh, kw]` and `{name}.bias` `[out]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dSpec {
    /// Square `k×k` kernel with "same" padding.
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, k: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel: (k, k),
            stride,
            padding: k / 2,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.in_channels == 0 || self.out_channels == 0 || self.stride == 0 {
            return Err(Error::Config(format!("{}: channels and stride must be positive", self.name)));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("{}: kernel extents must be odd, got {kh}x{kw}", self.name)));
        }
        Ok(())
    }

    /// Output spatial extent for an `h×w` input.
    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        Some((
            output_extent(h, self.kernel.0, self.stride, self.padding)?,
            output_extent(w, self.kernel.1, self.stride, self.padding)?,
        ))
    }

    /// Fan-in-scaled uniform weights (bound `sqrt(6 / fan_in)`), zero bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut Rng) -> Result<()> {
        self.validate()?;
        let (kh, kw) = self.kernel;
        let fan_in = (self.in_channels * kh * kw) as f64;
        let w = uniform(&[self.out_channels, self.in_channels, kh, kw], (6.0 / fan_in).sqrt(), rng);
        store.insert(&self.weight_name(), w)?;
        store.insert(&self.bias_name(), Tensor::zeros(&[self.out_channels]))
    }

    pub fn apply(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let w = bound.get(&self.weight_name())?;
        let b = bound.get(&self.bias_name())?;
        tape.conv2d(&self.name, x, w, b, self.stride, self.padding)
    }
}

impl Tape {
    /// Cross-correlation of `x` (`[C,H,W]` or `[N,C,H,W]`) with `weight`
    /// `[O,C,kh,kw]` plus `bias` `[O]`. `layer` names the layer in errors.
    pub fn conv2d(
        &mut self,
        layer: &str,
        x: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(weight).to_vec();
        let (n, c, h, w) = match xs[..] {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape(layer, format!("expected [C,H,W] or [N,C,H,W], got {xs:?}"))),
        };
        let [o, wc, kh, kw] = ws[..] else {
            return Err(Error::shape(layer, format!("weight must be [O,C,kh,kw], got {ws:?}")));
        };
        if wc != c {
            return Err(Error::shape(
                layer,
                format!("input has {c} channels, weight expects {wc}"),
            ));
        }
        if self.shape(bias) != [o] {
            return Err(Error::shape(
                layer,
                format!("bias must be [{o}], got {:?}", self.shape(bias)),
            ));
        }
        let (Some(ho), Some(wo)) = (output_extent(h, kh, stride, pad), output_extent(w, kw, stride, pad))
        else {
            return Err(Error::shape(
                layer,
                format!("{h}x{w} input too small for {kh}x{kw} kernel, stride {stride}, pad {pad}"),
            ));
        };
        let geom = ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            stride,
            pad,
            ho,
            wo,
        };
        let out = forward(
            &geom,
            self.value(x).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let shape = if xs.len() == 3 { vec![o, ho, wo] } else { vec![n, o, ho, wo] };
        Ok(self.push(
            Tensor::from_parts(shape, out),
            &[x, weight, bias],
            Op::Conv2d {
                x,
                weight,
                bias,
                geom,
            },
        ))
    }
}
