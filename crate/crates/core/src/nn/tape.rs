use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use core::ops::Range;

use super::{ParamGrads, ParamId, Tensor};
use crate::{Error, Real, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Stride, zero padding and dilation of a 2-D convolution, as (height, width).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub dilation: (usize, usize),
}

impl ConvGeom {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride: (stride, stride),
            padding: (padding, padding),
            dilation: (dilation, dilation),
        }
    }

    /// Size-preserving geometry for an odd `k x k` kernel at stride 1.
    pub fn same(k: usize, dilation: usize) -> Self {
        Self::new(1, dilation * (k - 1) / 2, dilation)
    }

    pub fn output_size(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Option<(usize, usize)> {
        let dim = |i: usize, k: usize, s: usize, p: usize, d: usize| -> Option<usize> {
            let span = d * (k - 1) + 1;
            let padded = i + 2 * p;
            if s == 0 || d == 0 || padded < span {
                None
            } else {
                Some((padded - span) / s + 1)
            }
        };
        Some((
            dim(
                input.0,
                kernel.0,
                self.stride.0,
                self.padding.0,
                self.dilation.0,
            )?,
            dim(
                input.1,
                kernel.1,
                self.stride.1,
                self.padding.1,
                self.dilation.1,
            )?,
        ))
    }
}

/// Which statistics a batch-norm node normalizes with.
#[derive(Debug, Clone)]
pub enum NormStats {
    /// Statistics of the current batch (training).
    Batch { eps: f64 },
    /// Fixed running statistics (inference).
    Running {
        mean: Vec<f64>,
        var: Vec<f64>,
        eps: f64,
    },
}

#[derive(Debug, Clone)]
struct ConvSave {
    x: Var,
    w: Var,
    b: Option<Var>,
    geom: ConvGeom,
}

#[derive(Debug)]
enum Op<F> {
    Leaf {
        param: Option<ParamId>,
    },
    Conv2d(ConvSave),
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Relu {
        x: Var,
    },
    Sigmoid {
        x: Var,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    LogSoftmax {
        x: Var,
    },
    NllMean {
        x: Var,
        labels: Vec<usize>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    Mask {
        x: Var,
        m: Var,
        residual: bool,
    },
    Resize {
        x: Var,
        rows: Vec<(usize, usize, f64)>,
        cols: Vec<(usize, usize, f64)>,
    },
    TimeMask {
        x: Var,
        lens: Vec<usize>,
    },
    ToFrames {
        x: Var,
    },
    MeanStdPool {
        x: Var,
        lens: Vec<usize>,
        mean: Vec<f64>,
        std: Vec<f64>,
    },
    Sum {
        x: Var,
    },
}

struct Node<F> {
    value: Tensor<F>,
    op: Op<F>,
    requires_grad: bool,
}

/// Record of one forward pass.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    backward_done: bool,
}

/// Gradients of a scalar with respect to every node that requires them.
pub struct Gradients<F> {
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Real> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&[F]> {
        self.grads[v.0].as_deref()
    }
}

fn shape_err<T>(msg: alloc::string::String) -> Result<T> {
    Err(Error::Shape(msg))
}

fn dims4(t: &[usize], what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => shape_err(format!("{what}: expected N x C x H x W, got {t:?}")),
    }
}

fn dims2(t: &[usize], what: &str) -> Result<(usize, usize)> {
    match *t {
        [a, b] => Ok((a, b)),
        _ => shape_err(format!("{what}: expected a 2-D tensor, got {t:?}")),
    }
}

/// `sum(f(x))` in f64 with eight independent partial sums.
fn sum_f64<F: Real>(xs: &[F], f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = [0.0f64; 8];
    let mut chunks = xs.chunks_exact(8);
    for ch in &mut chunks {
        for (a, v) in acc.iter_mut().zip(ch) {
            *a += f(v.as_f64());
        }
    }
    let tail: f64 = chunks.remainder().iter().map(|v| f(v.as_f64())).sum();
    acc.iter().sum::<f64>() + tail
}

/// `(sum a, sum a * b)` in f64 with eight independent partial sums.
fn sum_and_dot_f64<F: Real>(a: &[F], b: &[F]) -> (f64, f64) {
    let (mut s, mut d) = ([0.0f64; 8], [0.0f64; 8]);
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for i in 0..8 {
            let xv = x[i].as_f64();
            s[i] += xv;
            d[i] += xv * y[i].as_f64();
        }
    }
    let (mut ts, mut td) = (0.0, 0.0);
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        ts += x.as_f64();
        td += x.as_f64() * y.as_f64();
    }
    (s.iter().sum::<f64>() + ts, d.iter().sum::<f64>() + td)
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap offset `off`
/// (= tap * dilation) so that `o * stride + off - pad` lands in `[0, len)`.
fn valid_range(out: usize, len: usize, stride: usize, off: usize, pad: usize) -> (usize, usize) {
    // o * stride + off >= pad  and  o * stride + off < pad + len
    let lo = if off >= pad {
        0
    } else {
        (pad - off).div_ceil(stride)
    };
    let hi = if pad + len > off {
        ((pad + len - off - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo.min(out), hi.max(lo.min(out)))
}

struct ConvShape {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

impl ConvShape {
    fn is_pointwise(&self, g: &ConvGeom) -> bool {
        self.kh == 1 && self.kw == 1 && g.stride == (1, 1) && g.padding == (0, 0)
    }
}

/// Output rows per im2col tile, sized so a tile stays in cache.
fn tile_rows(s: &ConvShape) -> usize {
    const TILE_VALUES: usize = 1 << 16;
    (TILE_VALUES / (s.c * s.kh * s.kw * s.wo).max(1)).clamp(1, s.ho)
}

/// Columns for output rows `rows` only: `col` is `(c kh kw) x (rows.len() wo)`.
fn im2col<F: Real>(x: &[F], s: &ConvShape, g: &ConvGeom, rows: Range<usize>, col: &mut [F]) {
    let p = rows.len() * s.wo;
    for c in 0..s.c {
        let xc = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        for i in 0..s.kh {
            let (oh_lo, oh_hi) = valid_range(s.ho, s.h, g.stride.0, i * g.dilation.0, g.padding.0);
            for j in 0..s.kw {
                let row = (c * s.kh + i) * s.kw + j;
                let dst = &mut col[row * p..(row + 1) * p];
                let (ow_lo, ow_hi) =
                    valid_range(s.wo, s.w, g.stride.1, j * g.dilation.1, g.padding.1);
                for (r, oh) in rows.clone().enumerate() {
                    let d = &mut dst[r * s.wo..(r + 1) * s.wo];
                    if oh < oh_lo || oh >= oh_hi || ow_lo >= ow_hi {
                        d.iter_mut().for_each(|v| *v = F::zero());
                        continue;
                    }
                    let ih = oh * g.stride.0 + i * g.dilation.0 - g.padding.0;
                    let src = &xc[ih * s.w..(ih + 1) * s.w];
                    d[..ow_lo].iter_mut().for_each(|v| *v = F::zero());
                    d[ow_hi..].iter_mut().for_each(|v| *v = F::zero());
                    let iw0 = ow_lo * g.stride.1 + j * g.dilation.1 - g.padding.1;
                    if g.stride.1 == 1 {
                        d[ow_lo..ow_hi].copy_from_slice(&src[iw0..iw0 + (ow_hi - ow_lo)]);
                    } else {
                        for (k, ow) in (ow_lo..ow_hi).enumerate() {
                            d[ow] = src[iw0 + k * g.stride.1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] for the same row range, accumulating into `dx`.
fn col2im<F: Real>(col: &[F], s: &ConvShape, g: &ConvGeom, rows: Range<usize>, dx: &mut [F]) {
    let p = rows.len() * s.wo;
    for c in 0..s.c {
        let xc = &mut dx[c * s.h * s.w..(c + 1) * s.h * s.w];
        for i in 0..s.kh {
            let (oh_lo, oh_hi) = valid_range(s.ho, s.h, g.stride.0, i * g.dilation.0, g.padding.0);
            let (r_lo, r_hi) = (oh_lo.max(rows.start), oh_hi.min(rows.end));
            for j in 0..s.kw {
                let row = (c * s.kh + i) * s.kw + j;
                let src = &col[row * p..(row + 1) * p];
                let (ow_lo, ow_hi) =
                    valid_range(s.wo, s.w, g.stride.1, j * g.dilation.1, g.padding.1);
                if ow_lo >= ow_hi {
                    continue;
                }
                for oh in r_lo..r_hi.max(r_lo) {
                    let ih = oh * g.stride.0 + i * g.dilation.0 - g.padding.0;
                    let dst = &mut xc[ih * s.w..(ih + 1) * s.w];
                    let iw0 = ow_lo * g.stride.1 + j * g.dilation.1 - g.padding.1;
                    let r = oh - rows.start;
                    let srow = &src[r * s.wo..(r + 1) * s.wo];
                    if g.stride.1 == 1 {
                        let n = ow_hi - ow_lo;
                        for (d, v) in dst[iw0..iw0 + n].iter_mut().zip(&srow[ow_lo..ow_hi]) {
                            *d = *d + *v;
                        }
                    } else {
                        for (k, ow) in (ow_lo..ow_hi).enumerate() {
                            let iw = iw0 + k * g.stride.1;
                            dst[iw] = dst[iw] + srow[ow];
                        }
                    }
                }
            }
        }
    }
}

fn resize_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    fn push(&mut self, value: Tensor<F>, op: Op<F>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Every recorded value, in recording order.
    pub fn values(&self) -> impl Iterator<Item = &Tensor<F>> {
        self.nodes.iter().map(|n| &n.value)
    }

    pub fn value(&self, v: Var) -> &Tensor<F> {
        &self.nodes[v.0].value
    }

    /// Input tensor; gradients are tracked when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf { param: None }, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<F>) -> Var {
        self.leaf(value, false)
    }

    /// Leaf standing for a stored parameter.
    pub fn param_leaf(&mut self, id: ParamId, value: Tensor<F>) -> Var {
        self.push(value, Op::Leaf { param: Some(id) }, true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, geom: ConvGeom) -> Result<Var> {
        let (n, c, h, wd) = dims4(self.value(x).shape(), "conv2d input")?;
        let (o, cw, kh, kw) = dims4(self.value(w).shape(), "conv2d weight")?;
        if cw != c {
            return shape_err(format!(
                "conv2d: input has {c} channels, weight expects {cw}"
            ));
        }
        if let Some(b) = b {
            if self.value(b).numel() != o {
                return shape_err(format!(
                    "conv2d: bias has {} values for {o} outputs",
                    self.value(b).numel()
                ));
            }
        }
        let (ho, wo) = geom.output_size((h, wd), (kh, kw)).ok_or_else(|| {
            Error::Shape(format!(
                "conv2d: kernel {kh}x{kw} does not fit {h}x{wd} with {geom:?}"
            ))
        })?;
        let s = ConvShape {
            c,
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
        };
        let ck = c * kh * kw;
        let p = ho * wo;
        let mut out = vec![F::zero(); n * o * p];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        let pointwise = s.is_pointwise(&geom);
        let tile = tile_rows(&s);
        let mut col = if pointwise {
            Vec::new()
        } else {
            vec![F::zero(); ck * tile * wo]
        };
        let mut tmp = if pointwise {
            Vec::new()
        } else {
            vec![F::zero(); o * tile * wo]
        };
        for ni in 0..n {
            let xn = &xv[ni * c * h * wd..(ni + 1) * c * h * wd];
            let on = &mut out[ni * o * p..(ni + 1) * o * p];
            if pointwise {
                F::gemm(o, ck, p, wv, (ck, 1), xn, (p, 1), F::zero(), on);
                continue;
            }
            for r0 in (0..ho).step_by(tile) {
                let rows = r0..(r0 + tile).min(ho);
                let tp = rows.len() * wo;
                im2col(xn, &s, &geom, rows, &mut col[..ck * tp]);
                F::gemm(o, ck, tp, wv, (ck, 1), &col[..ck * tp], (tp, 1), F::zero(), &mut tmp[..o * tp]);
                for oi in 0..o {
                    on[oi * p + r0 * wo..oi * p + r0 * wo + tp].copy_from_slice(&tmp[oi * tp..(oi + 1) * tp]);
                }
            }
        }
        if let Some(b) = b {
            let bv = self.value(b).data();
            for ni in 0..n {
                for oi in 0..o {
                    let bias = bv[oi];
                    for v in &mut out[(ni * o + oi) * p..(ni * o + oi + 1) * p] {
                        *v = *v + bias;
                    }
                }
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![n, o, ho, wo], out)?;
        Ok(self.push(value, Op::Conv2d(ConvSave { x, w, b, geom }), rg))
    }

    /// Per-channel normalization of an N x C x H x W tensor followed by the
    /// affine `gamma * xhat + beta`. With [`NormStats::Batch`] the batch mean
    /// and biased variance are returned for running-statistic updates.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: NormStats,
    ) -> Result<(Var, Option<(Vec<f64>, Vec<f64>)>)> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "batch_norm input")?;
        if self.value(gamma).numel() != c || self.value(beta).numel() != c {
            return shape_err(format!(
                "batch_norm: affine parameters do not match {c} channels"
            ));
        }
        let hw = h * w;
        let count = (n * hw) as f64;
        let xv = self.value(x).data();
        let (mean, var, eps, batch_stats) = match stats {
            NormStats::Batch { eps } => {
                let mut mean = vec![0.0f64; c];
                let mut var = vec![0.0f64; c];
                for ci in 0..c {
                    let plane = |ni: usize| &xv[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                    let s: f64 = (0..n).map(|ni| sum_f64(plane(ni), |v| v)).sum();
                    let m = s / count;
                    let q: f64 = (0..n)
                        .map(|ni| sum_f64(plane(ni), |v| (v - m) * (v - m)))
                        .sum();
                    mean[ci] = m;
                    var[ci] = q / count;
                }
                (mean, var, eps, true)
            }
            NormStats::Running { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return shape_err(format!(
                        "batch_norm: running statistics do not match {c} channels"
                    ));
                }
                (mean, var, eps, false)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + eps)).collect();
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![F::zero(); xv.len()];
        let mut out = vec![F::zero(); xv.len()];
        for ni in 0..n {
            for ci in 0..c {
                let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                let (m, is) = (F::from_f64(mean[ci]), F::from_f64(inv_std[ci]));
                let (g, b) = (gv[ci], bv[ci]);
                for ((xh, o), v) in xhat[r.clone()]
                    .iter_mut()
                    .zip(&mut out[r.clone()])
                    .zip(&xv[r])
                {
                    *xh = (*v - m) * is;
                    *o = g * *xh + b;
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let shape = self.value(x).shape().to_vec();
        let value = Tensor::new(shape, out)?;
        let ret = if batch_stats { Some((mean, var)) } else { None };
        let v = self.push(
            value,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            },
            rg,
        );
        Ok((v, ret))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| if v > F::zero() { v } else { F::zero() })
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Relu { x }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let data = t
            .data()
            .iter()
            .map(|&v| F::one() / (F::one() + (-v).exp()))
            .collect();
        let value = Tensor::new(t.shape().to_vec(), data).expect("same shape");
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid { x }, rg)
    }

    /// Max pooling with a `k x k` window and stride `stride`, no padding.
    pub fn max_pool2d(&mut self, x: Var, k: usize, stride: usize) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "max_pool2d input")?;
        if k == 0 || stride == 0 || h < k || w < k {
            return shape_err(format!("max_pool2d: window {k} does not fit {h}x{w}"));
        }
        let ho = (h - k) / stride + 1;
        let wo = (w - k) / stride + 1;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oh in 0..ho {
                for ow in 0..wo {
                    let mut best = base + oh * stride * w + ow * stride;
                    for i in 0..k {
                        for j in 0..k {
                            let idx = base + (oh * stride + i) * w + ow * stride + j;
                            if xv[idx] > xv[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(xv[best]);
                    argmax.push(best);
                }
            }
        }
        let rg = self.rg(x);
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { x, argmax }, rg))
    }

    /// N x C x H x W -> N x C channel means.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "global_avg_pool input")?;
        let hw = h * w;
        let xv = self.value(x).data();
        let out = (0..n * c)
            .map(|p| {
                F::from_f64(
                    xv[p * hw..(p + 1) * hw]
                        .iter()
                        .map(|v| v.as_f64())
                        .sum::<f64>()
                        / hw as f64,
                )
            })
            .collect();
        let rg = self.rg(x);
        let value = Tensor::new(vec![n, c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool { x }, rg))
    }

    /// `x w^T + b` for x: N x I, w: O x I, b: O.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (n, i) = dims2(self.value(x).shape(), "linear input")?;
        let (o, iw) = dims2(self.value(w).shape(), "linear weight")?;
        if i != iw {
            return shape_err(format!(
                "linear: input has {i} features, weight expects {iw}"
            ));
        }
        let mut out = vec![F::zero(); n * o];
        F::gemm(
            n,
            i,
            o,
            self.value(x).data(),
            (i, 1),
            self.value(w).data(),
            (1, i),
            F::zero(),
            &mut out,
        );
        if let Some(b) = b {
            let bv = self.value(b).data();
            if bv.len() != o {
                return shape_err(format!(
                    "linear: bias has {} values for {o} outputs",
                    bv.len()
                ));
            }
            for row in out.chunks_mut(o) {
                add_into(row, bv);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![n, o], out)?;
        Ok(self.push(value, Op::Linear { x, w, b }, rg))
    }

    /// Row-wise log-softmax of an N x K tensor (max-subtracted).
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let (n, k) = dims2(self.value(x).shape(), "log_softmax input")?;
        if k == 0 {
            return shape_err("log_softmax: zero classes".into());
        }
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(n * k);
        for row in xv.chunks(k) {
            out.extend(log_softmax_row(row));
        }
        let rg = self.rg(x);
        let value = Tensor::new(vec![n, k], out)?;
        Ok(self.push(value, Op::LogSoftmax { x }, rg))
    }

    /// Mean negative log-likelihood of `labels` under row log-probabilities.
    pub fn nll_mean(&mut self, logp: Var, labels: &[usize]) -> Result<Var> {
        let (n, k) = dims2(self.value(logp).shape(), "nll input")?;
        if labels.len() != n {
            return shape_err(format!("nll: {} labels for {n} rows", labels.len()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                classes: k,
            });
        }
        let xv = self.value(logp).data();
        let s: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &l)| xv[r * k + l].as_f64())
            .sum();
        let rg = self.rg(logp);
        let value = Tensor::scalar(F::from_f64(-s / n as f64));
        Ok(self.push(
            value,
            Op::NllMean {
                x: logp,
                labels: labels.to_vec(),
            },
            rg,
        ))
    }

    /// Mean cross-entropy of raw logits against class indices.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.log_softmax(logits)?;
        self.nll_mean(lp, labels)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return shape_err(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x + *y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| *x * *y)
            .collect();
        let value = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul { a, b }, rg))
    }

    /// x: N x C x H x W rescaled per channel by s: N x C.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "scale_channels input")?;
        if self.value(s).shape() != [n, c] {
            return shape_err(format!(
                "scale_channels: scale {:?} for input {n}x{c}",
                self.value(s).shape()
            ));
        }
        let hw = h * w;
        let sv = self.value(s).data();
        let mut out = self.value(x).data().to_vec();
        for (p, chunk) in out.chunks_mut(hw).enumerate() {
            let g = sv[p];
            chunk.iter_mut().for_each(|v| *v = *v * g);
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::ScaleChannels { x, s }, rg))
    }

    /// Applies a single-channel mask m: N x 1 x H x W to every channel of x.
    /// `residual` uses `x * (1 + m)` instead of `x * m`.
    pub fn apply_mask(&mut self, x: Var, m: Var, residual: bool) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "mask input")?;
        if self.value(m).shape() != [n, 1, h, w] {
            return shape_err(format!(
                "mask: {:?} does not match input {n}x{c}x{h}x{w}",
                self.value(m).shape()
            ));
        }
        let hw = h * w;
        let mv = self.value(m).data();
        let mut out = self.value(x).data().to_vec();
        for ni in 0..n {
            let mrow = &mv[ni * hw..(ni + 1) * hw];
            for ci in 0..c {
                let o = &mut out[(ni * c + ci) * hw..(ni * c + ci + 1) * hw];
                for (v, g) in o.iter_mut().zip(mrow) {
                    let g = if residual { F::one() + *g } else { *g };
                    *v = *v * g;
                }
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(x) || self.rg(m);
        Ok(self.push(value, Op::Mask { x, m, residual }, rg))
    }

    /// Bilinear resize to `size` (half-pixel centres, edge clamped).
    pub fn resize_bilinear(&mut self, x: Var, size: (usize, usize)) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "resize input")?;
        if size.0 == 0 || size.1 == 0 || h == 0 || w == 0 {
            return shape_err("resize: empty size".into());
        }
        let rows = resize_taps(h, size.0);
        let cols = resize_taps(w, size.1);
        let xv = self.value(x).data();
        let (ho, wo) = size;
        let mut out = vec![F::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let src = &xv[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ho * wo..(p + 1) * ho * wo];
            for (oh, &(r0, r1, a)) in rows.iter().enumerate() {
                for (ow, &(c0, c1, b)) in cols.iter().enumerate() {
                    let v = (1.0 - a)
                        * ((1.0 - b) * src[r0 * w + c0].as_f64() + b * src[r0 * w + c1].as_f64())
                        + a * ((1.0 - b) * src[r1 * w + c0].as_f64()
                            + b * src[r1 * w + c1].as_f64());
                    dst[oh * wo + ow] = F::from_f64(v);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Resize { x, rows, cols }, rg))
    }

    /// Zeroes columns `w >= lens[n]` of an N x C x H x W tensor.
    pub fn time_mask(&mut self, x: Var, lens: &[usize]) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "time_mask input")?;
        if lens.len() != n {
            return shape_err(format!(
                "time_mask: {} lengths for batch of {n}",
                lens.len()
            ));
        }
        let mut out = self.value(x).data().to_vec();
        for ni in 0..n {
            let keep = lens[ni].min(w);
            for row in out[ni * c * h * w..(ni + 1) * c * h * w].chunks_mut(w) {
                row[keep..].iter_mut().for_each(|v| *v = F::zero());
            }
        }
        let value = Tensor::new(vec![n, c, h, w], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::TimeMask {
                x,
                lens: lens.to_vec(),
            },
            rg,
        ))
    }

    /// N x C x H x W -> N x W x (C*H): one feature vector per time step,
    /// feature index `c * H + h`.
    pub fn to_frames(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = dims4(self.value(x).shape(), "to_frames input")?;
        let xv = self.value(x).data();
        let f = c * h;
        let mut out = vec![F::zero(); n * w * f];
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    let src = &xv[((ni * c + ci) * h + hi) * w..((ni * c + ci) * h + hi + 1) * w];
                    for (t, v) in src.iter().enumerate() {
                        out[(ni * w + t) * f + ci * h + hi] = *v;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n, w, f], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::ToFrames { x }, rg))
    }

    /// Per-utterance mean and standard deviation over the first `lens[b]`
    /// steps of a B x T x F tensor: output B x 2F (means, then stds), with
    /// `std = sqrt(E[x^2] - E[x]^2 + eps)`.
    pub fn mean_std_pool(&mut self, x: Var, lens: &[usize], eps: f64) -> Result<Var> {
        let shape = self.value(x).shape();
        let (b, t, f) = match *shape {
            [b, t, f] => (b, t, f),
            _ => return shape_err(format!("mean_std_pool: expected B x T x F, got {shape:?}")),
        };
        if lens.len() != b {
            return shape_err(format!(
                "mean_std_pool: {} lengths for batch of {b}",
                lens.len()
            ));
        }
        if let Some(bad) = lens.iter().find(|&&l| l == 0 || l > t) {
            return Err(Error::InvalidConfig(format!(
                "mean_std_pool: valid length {bad} outside 1..={t}"
            )));
        }
        let xv = self.value(x).data();
        let mut mean = vec![0.0f64; b * f];
        let mut std = vec![0.0f64; b * f];
        for bi in 0..b {
            let l = lens[bi] as f64;
            for fi in 0..f {
                let mut s = 0.0;
                let mut q = 0.0;
                for ti in 0..lens[bi] {
                    let v = xv[(bi * t + ti) * f + fi].as_f64();
                    s += v;
                    q += v * v;
                }
                let m = s / l;
                let var = (q / l - m * m).max(0.0);
                mean[bi * f + fi] = m;
                std[bi * f + fi] = libm::sqrt(var + eps);
            }
        }
        let mut out = Vec::with_capacity(b * 2 * f);
        for bi in 0..b {
            out.extend(mean[bi * f..(bi + 1) * f].iter().map(|&v| F::from_f64(v)));
            out.extend(std[bi * f..(bi + 1) * f].iter().map(|&v| F::from_f64(v)));
        }
        let value = Tensor::new(vec![b, 2 * f], out)?;
        let rg = self.rg(x);
        Ok(self.push(
            value,
            Op::MeanStdPool {
                x,
                lens: lens.to_vec(),
                mean,
                std,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(F::from_f64(s)), Op::Sum { x }, rg)
    }

    /// Fingerprint of every non-differentiable branch taken (ReLU signs,
    /// max-pool winners). Two forward passes with equal fingerprints lie on
    /// the same smooth piece of the network function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Relu { x } => {
                    for v in self.value(*x).data() {
                        mix(u64::from(*v > F::zero()));
                    }
                }
                Op::MaxPool { argmax, .. } => argmax.iter().for_each(|&i| mix(i as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from a scalar `loss`. A tape supports one sweep.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<F>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        if !self.rg(loss) {
            return Err(Error::DetachedGraph);
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Reverse sweep that keeps only the parameter gradients. Each node's
    /// value, saved state and gradient are released as soon as it has been
    /// propagated, which roughly halves peak memory compared to
    /// [`Tape::backward`].
    pub fn into_param_grads(mut self, loss: Var, n_params: usize) -> Result<ParamGrads<F>> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let n = self.value(loss).numel();
        if n != 1 {
            return Err(Error::NonScalarLoss(n));
        }
        if !self.rg(loss) {
            return Err(Error::DetachedGraph);
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        let mut out: ParamGrads<F> = vec![None; n_params];
        for i in (0..=loss.0).rev() {
            if self.nodes[i].requires_grad {
                if let Some(g) = grads[i].take() {
                    self.backprop_node(i, &g, &mut grads)?;
                    if let Op::Leaf { param: Some(id) } = self.nodes[i].op {
                        match &mut out[id.0] {
                            Some(acc) => add_into(acc, &g),
                            slot @ None => *slot = Some(g),
                        }
                    }
                }
            }
            self.nodes[i].value.release();
            self.nodes[i].op = Op::Leaf { param: None };
        }
        Ok(out)
    }

    /// Gradients of the parameter leaves, indexed by parameter id.
    pub fn param_grads(&self, grads: &Gradients<F>, n_params: usize) -> ParamGrads<F> {
        let mut out: ParamGrads<F> = vec![None; n_params];
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads.grads[i] {
                    match &mut out[id.0] {
                        Some(acc) => add_into(acc, g),
                        slot @ None => *slot = Some(g.clone()),
                    }
                }
            }
        }
        out
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let node = &self.nodes[i];
        let want = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [F])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot =
                grads[v.0].get_or_insert_with(|| vec![F::zero(); self.nodes[v.0].value.numel()]);
            f(slot);
        };
        match &node.op {
            Op::Leaf { .. } => {}
            Op::Conv2d(save) => self.backprop_conv(save, g, grads)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let (n, c, h, w) = dims4(node.value.shape(), "batch_norm")?;
                let hw = h * w;
                let count = (n * hw) as f64;
                let gv = self.value(*gamma).data();
                let mut dgamma = vec![0.0f64; c];
                let mut dbeta = vec![0.0f64; c];
                for ni in 0..n {
                    for ci in 0..c {
                        let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                        let (sb, sg) = sum_and_dot_f64(&g[r.clone()], &xhat[r]);
                        dgamma[ci] += sg;
                        dbeta[ci] += sb;
                    }
                }
                if want(*x) {
                    // dx = a * gy + b + k * xhat per channel
                    let coef: Vec<(F, F, F)> = (0..c)
                        .map(|ci| {
                            let gam = gv[ci].as_f64();
                            let is = inv_std[ci];
                            if *batch_stats {
                                (
                                    F::from_f64(is * gam),
                                    F::from_f64(-is * dbeta[ci] * gam / count),
                                    F::from_f64(-is * dgamma[ci] * gam / count),
                                )
                            } else {
                                (F::from_f64(is * gam), F::zero(), F::zero())
                            }
                        })
                        .collect();
                    acc(*x, &mut |s| {
                        for ni in 0..n {
                            for (ci, &(a, b, k)) in coef.iter().enumerate() {
                                let r = (ni * c + ci) * hw..(ni * c + ci + 1) * hw;
                                for ((d, gy), xh) in s[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xhat[r]) {
                                    *d = *d + (a * *gy + b + k * *xh);
                                }
                            }
                        }
                    });
                }
                acc(*gamma, &mut |s| {
                    for (d, v) in s.iter_mut().zip(&dgamma) {
                        *d = *d + F::from_f64(*v);
                    }
                });
                acc(*beta, &mut |s| {
                    for (d, v) in s.iter_mut().zip(&dbeta) {
                        *d = *d + F::from_f64(*v);
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for ((d, gy), xi) in s.iter_mut().zip(g).zip(xv) {
                        if *xi > F::zero() {
                            *d = *d + *gy;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                acc(*x, &mut |s| {
                    for ((d, gy), yi) in s.iter_mut().zip(g).zip(y) {
                        *d = *d + *gy * *yi * (F::one() - *yi);
                    }
                });
            }
            Op::MaxPool { x, argmax } => acc(*x, &mut |s| {
                for (gy, &idx) in g.iter().zip(argmax) {
                    s[idx] = s[idx] + *gy;
                }
            }),
            Op::GlobalAvgPool { x } => {
                let shape = self.value(*x).shape();
                let hw = shape[2] * shape[3];
                let inv = F::from_f64(1.0 / hw as f64);
                acc(*x, &mut |s| {
                    for (p, chunk) in s.chunks_mut(hw).enumerate() {
                        let v = g[p] * inv;
                        chunk.iter_mut().for_each(|d| *d = *d + v);
                    }
                });
            }
            Op::Linear { x, w, b } => {
                let (n, i_dim) = dims2(self.value(*x).shape(), "linear")?;
                let o = self.value(*w).shape()[0];
                if want(*x) {
                    let wv = self.value(*w).data();
                    acc(*x, &mut |s| {
                        F::gemm(n, o, i_dim, g, (o, 1), wv, (i_dim, 1), F::one(), s)
                    });
                }
                if want(*w) {
                    let xv = self.value(*x).data();
                    acc(*w, &mut |s| {
                        F::gemm(o, n, i_dim, g, (1, o), xv, (i_dim, 1), F::one(), s)
                    });
                }
                if let Some(b) = b {
                    acc(*b, &mut |s| {
                        for row in g.chunks(o) {
                            add_into(s, row);
                        }
                    });
                }
            }
            Op::LogSoftmax { x } => {
                let k = node.value.shape()[1];
                let y = node.value.data();
                acc(*x, &mut |s| {
                    for ((srow, grow), yrow) in s.chunks_mut(k).zip(g.chunks(k)).zip(y.chunks(k)) {
                        let total: f64 = grow.iter().map(|v| v.as_f64()).sum();
                        for ((d, gy), yi) in srow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + F::from_f64(gy.as_f64() - libm::exp(yi.as_f64()) * total);
                        }
                    }
                });
            }
            Op::NllMean { x, labels } => {
                let k = self.value(*x).shape()[1];
                let scale = F::from_f64(-1.0 / labels.len() as f64) * g[0];
                acc(*x, &mut |s| {
                    for (r, &l) in labels.iter().enumerate() {
                        s[r * k + l] = s[r * k + l] + scale;
                    }
                });
            }
            Op::Add { a, b } => {
                acc(*a, &mut |s| add_into(s, g));
                acc(*b, &mut |s| add_into(s, g));
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &mut |s| {
                    for ((d, gy), o) in s.iter_mut().zip(g).zip(bv) {
                        *d = *d + *gy * *o;
                    }
                });
                acc(*b, &mut |s| {
                    for ((d, gy), o) in s.iter_mut().zip(g).zip(av) {
                        *d = *d + *gy * *o;
                    }
                });
            }
            Op::ScaleChannels { x, s: sc } => {
                let shape = node.value.shape();
                let hw = shape[2] * shape[3];
                let (xv, sv) = (self.value(*x).data(), self.value(*sc).data());
                acc(*x, &mut |s| {
                    for (p, (chunk, gchunk)) in s.chunks_mut(hw).zip(g.chunks(hw)).enumerate() {
                        for (d, gy) in chunk.iter_mut().zip(gchunk) {
                            *d = *d + *gy * sv[p];
                        }
                    }
                });
                acc(*sc, &mut |s| {
                    for (p, d) in s.iter_mut().enumerate() {
                        let dot: f64 = g[p * hw..(p + 1) * hw]
                            .iter()
                            .zip(&xv[p * hw..(p + 1) * hw])
                            .map(|(a, b)| a.as_f64() * b.as_f64())
                            .sum();
                        *d = *d + F::from_f64(dot);
                    }
                });
            }
            Op::Mask { x, m, residual } => {
                let (n, c, h, w) = dims4(node.value.shape(), "mask")?;
                let hw = h * w;
                let (xv, mv) = (self.value(*x).data(), self.value(*m).data());
                acc(*x, &mut |s| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let r = (ni * c + ci) * hw;
                            for j in 0..hw {
                                let gate = if *residual {
                                    F::one() + mv[ni * hw + j]
                                } else {
                                    mv[ni * hw + j]
                                };
                                s[r + j] = s[r + j] + g[r + j] * gate;
                            }
                        }
                    }
                });
                acc(*m, &mut |s| {
                    for ni in 0..n {
                        for ci in 0..c {
                            let r = (ni * c + ci) * hw;
                            for j in 0..hw {
                                s[ni * hw + j] = s[ni * hw + j] + g[r + j] * xv[r + j];
                            }
                        }
                    }
                });
            }
            Op::Resize { x, rows, cols } => {
                let shape = self.value(*x).shape();
                let (h, w) = (shape[2], shape[3]);
                let (ho, wo) = (rows.len(), cols.len());
                acc(*x, &mut |s| {
                    for (p, gplane) in g.chunks(ho * wo).enumerate() {
                        let dst = &mut s[p * h * w..(p + 1) * h * w];
                        for (oh, &(r0, r1, a)) in rows.iter().enumerate() {
                            for (ow, &(c0, c1, b)) in cols.iter().enumerate() {
                                let gy = gplane[oh * wo + ow].as_f64();
                                let mut put = |idx: usize, wgt: f64| {
                                    dst[idx] = dst[idx] + F::from_f64(gy * wgt)
                                };
                                put(r0 * w + c0, (1.0 - a) * (1.0 - b));
                                put(r0 * w + c1, (1.0 - a) * b);
                                put(r1 * w + c0, a * (1.0 - b));
                                put(r1 * w + c1, a * b);
                            }
                        }
                    }
                });
            }
            Op::TimeMask { x, lens } => {
                let (n, c, h, w) = dims4(node.value.shape(), "time_mask")?;
                acc(*x, &mut |s| {
                    for ni in 0..n {
                        let keep = lens[ni].min(w);
                        let r = ni * c * h * w..(ni + 1) * c * h * w;
                        for (srow, grow) in s[r.clone()].chunks_mut(w).zip(g[r].chunks(w)) {
                            add_into(&mut srow[..keep], &grow[..keep]);
                        }
                    }
                });
            }
            Op::ToFrames { x } => {
                let (n, c, h, w) = dims4(self.value(*x).shape(), "to_frames")?;
                let f = c * h;
                acc(*x, &mut |s| {
                    for ni in 0..n {
                        for ci in 0..c {
                            for hi in 0..h {
                                let base = ((ni * c + ci) * h + hi) * w;
                                for t in 0..w {
                                    s[base + t] = s[base + t] + g[(ni * w + t) * f + ci * h + hi];
                                }
                            }
                        }
                    }
                });
            }
            Op::MeanStdPool { x, lens, mean, std } => {
                let shape = self.value(*x).shape();
                let (t, f) = (shape[1], shape[2]);
                let xv = self.value(*x).data();
                acc(*x, &mut |s| {
                    for (bi, &len) in lens.iter().enumerate() {
                        let l = len as f64;
                        for fi in 0..f {
                            let gm = g[bi * 2 * f + fi].as_f64();
                            let gs = g[bi * 2 * f + f + fi].as_f64();
                            let (m, sd) = (mean[bi * f + fi], std[bi * f + fi]);
                            for ti in 0..len {
                                let idx = (bi * t + ti) * f + fi;
                                let v = xv[idx].as_f64();
                                s[idx] = s[idx] + F::from_f64(gm / l + gs * (v - m) / (l * sd));
                            }
                        }
                    }
                });
            }
            Op::Sum { x } => acc(*x, &mut |s| s.iter_mut().for_each(|d| *d = *d + g[0])),
        }
        Ok(())
    }

    fn backprop_conv(&self, save: &ConvSave, g: &[F], grads: &mut [Option<Vec<F>>]) -> Result<()> {
        let (n, c, h, wd) = dims4(self.value(save.x).shape(), "conv2d")?;
        let (o, _, kh, kw) = dims4(self.value(save.w).shape(), "conv2d")?;
        let (ho, wo) = save
            .geom
            .output_size((h, wd), (kh, kw))
            .expect("checked in forward");
        let s = ConvShape {
            c,
            h,
            w: wd,
            kh,
            kw,
            ho,
            wo,
        };
        let ck = c * kh * kw;
        let p = ho * wo;
        let need_x = self.nodes[save.x.0].requires_grad;
        let need_w = self.nodes[save.w.0].requires_grad;
        let pointwise = s.is_pointwise(&save.geom);
        let xv = self.value(save.x).data();
        let wv = self.value(save.w).data();
        if let Some(b) = save.b {
            if self.nodes[b.0].requires_grad {
                let slot = grads[b.0].get_or_insert_with(|| vec![F::zero(); o]);
                for ni in 0..n {
                    for oi in 0..o {
                        let sum: f64 = g[(ni * o + oi) * p..(ni * o + oi + 1) * p]
                            .iter()
                            .map(|v| v.as_f64())
                            .sum();
                        slot[oi] = slot[oi] + F::from_f64(sum);
                    }
                }
            }
        }
        let tile = tile_rows(&s);
        if need_w {
            let mut dw = grads[save.w.0]
                .take()
                .unwrap_or_else(|| vec![F::zero(); o * ck]);
            let mut col = if pointwise {
                Vec::new()
            } else {
                vec![F::zero(); ck * tile * wo]
            };
            for ni in 0..n {
                let xn = &xv[ni * c * h * wd..(ni + 1) * c * h * wd];
                let gn = &g[ni * o * p..(ni + 1) * o * p];
                if pointwise {
                    F::gemm(o, p, ck, gn, (p, 1), xn, (1, p), F::one(), &mut dw);
                    continue;
                }
                for r0 in (0..ho).step_by(tile) {
                    let rows = r0..(r0 + tile).min(ho);
                    let tp = rows.len() * wo;
                    im2col(xn, &s, &save.geom, rows, &mut col[..ck * tp]);
                    F::gemm(o, tp, ck, &gn[r0 * wo..], (p, 1), &col[..ck * tp], (1, tp), F::one(), &mut dw);
                }
            }
            grads[save.w.0] = Some(dw);
        }
        if need_x {
            let mut dx = grads[save.x.0]
                .take()
                .unwrap_or_else(|| vec![F::zero(); n * c * h * wd]);
            let mut dcol = if pointwise {
                Vec::new()
            } else {
                vec![F::zero(); ck * tile * wo]
            };
            for ni in 0..n {
                let gn = &g[ni * o * p..(ni + 1) * o * p];
                let dxn = &mut dx[ni * c * h * wd..(ni + 1) * c * h * wd];
                if pointwise {
                    F::gemm(ck, o, p, wv, (1, ck), gn, (p, 1), F::one(), dxn);
                    continue;
                }
                for r0 in (0..ho).step_by(tile) {
                    let rows = r0..(r0 + tile).min(ho);
                    let tp = rows.len() * wo;
                    F::gemm(ck, o, tp, wv, (1, ck), &gn[r0 * wo..], (p, 1), F::zero(), &mut dcol[..ck * tp]);
                    col2im(&dcol[..ck * tp], &s, &save.geom, rows, dxn);
                }
            }
            grads[save.x.0] = Some(dx);
        }
        Ok(())
    }
}

fn log_softmax_row<F: Real>(row: &[F]) -> impl Iterator<Item = F> + '_ {
    let m = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.as_f64()));
    let lse = m + libm::log(row.iter().map(|v| libm::exp(v.as_f64() - m)).sum::<f64>());
    row.iter().map(move |v| F::from_f64(v.as_f64() - lse))
}

/// Row log-softmax outside of any tape.
pub fn log_softmax_vec<F: Real>(row: &[F]) -> Vec<F> {
    log_softmax_row(row).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valid_range_matches_brute_force() {
        for out in 1..6 {
            for len in 1..8 {
                for stride in 1..3 {
                    for off in 0..5 {
                        for pad in 0..4 {
                            let (lo, hi) = valid_range(out, len, stride, off, pad);
                            for o in 0..out {
                                let pos = (o * stride + off) as isize - pad as isize;
                                let inside = pos >= 0 && (pos as usize) < len;
                                assert_eq!(
                                    inside,
                                    o >= lo && o < hi,
                                    "{out} {len} {stride} {off} {pad} o={o}"
                                );
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn resize_identity_when_sizes_match() {
        let mut tape = Tape::<f64>::new();
        let data: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let x = tape.constant(Tensor::new(vec![1, 1, 3, 4], data.clone()).unwrap());
        let y = tape.resize_bilinear(x, (3, 4)).unwrap();
        assert_eq!(tape.value(y).data(), &data[..]);
    }
}
