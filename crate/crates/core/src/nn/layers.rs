//! Layers with hand-written backward passes.
//!
//! `forward` runs in training mode and caches what `backward` needs;
//! `infer` runs in evaluation mode and touches no state, so a trained
//! network can serve concurrent callers. Work is split across batch
//! elements or output channels only, never across a reduction, so results
//! do not depend on the thread count.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Role of a named tensor inside a network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Param,
    /// Non-trainable state such as batch-norm running statistics.
    Buffer,
}

pub type Visitor<'a, S> = dyn FnMut(&str, TensorKind, &Tensor<S>) + 'a;
pub type VisitorMut<'a, S> = dyn FnMut(&str, TensorKind, &mut Tensor<S>) + 'a;

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn normal_vec<S: Scalar, R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<S> {
    (0..len)
        .map(|_| S::from_f64(std * rng.sample::<f64, _>(StandardNormal)))
        .collect()
}

fn missing_cache(layer: &str) -> Error {
    Error::Training(format!(
        "{layer}: backward called without a cached forward pass"
    ))
}

/// Range of output positions `t` for which `t + shift` is a valid input index.
#[inline]
fn valid_range(len: usize, shift: isize) -> (usize, usize) {
    let lo = (-shift).max(0) as usize;
    let hi = (len as isize - shift).clamp(0, len as isize) as usize;
    (lo.min(hi), hi)
}

/// 1-D convolution (cross-correlation, no kernel flip) with zero "same"
/// padding and stride 1.
#[derive(Debug, Clone)]
pub struct Conv1d<S: Scalar> {
    /// `[c_out, c_in, kernel]`
    pub weight: Tensor<S>,
    /// `[c_out]`
    pub bias: Tensor<S>,
    c_in: usize,
    c_out: usize,
    kernel: usize,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Conv1d<S> {
    pub fn new<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if c_in == 0 || c_out == 0 || kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "conv1d needs positive channels and an odd kernel, got {c_in}->{c_out} k={kernel}"
            )));
        }
        let fan_in = (c_in * kernel) as f64;
        let weight = normal_vec(c_out * c_in * kernel, (2.0 / fan_in).sqrt(), rng);
        Ok(Conv1d {
            weight: Tensor::param(&[c_out, c_in, kernel], weight),
            bias: Tensor::param(&[c_out], vec![S::zero(); c_out]),
            c_in,
            c_out,
            kernel,
            input: None,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.c_in
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    fn pad(&self) -> isize {
        (self.kernel / 2) as isize
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, c, l) = x.dims3()?;
        if c != self.c_in {
            return Err(Error::shape(format!("{} input channels", self.c_in), c));
        }
        let (c_in, c_out, k, pad) = (self.c_in, self.c_out, self.kernel, self.pad());
        let w = self.weight.data();
        let bias = self.bias.data();
        let mut y = vec![S::zero(); b * c_out * l];
        y.par_chunks_mut(c_out * l)
            .zip(x.data().par_chunks(c_in * l))
            .for_each(|(yb, xb)| {
                for o in 0..c_out {
                    let yo = &mut yb[o * l..(o + 1) * l];
                    yo.iter_mut().for_each(|v| *v = bias[o]);
                    for ci in 0..c_in {
                        let xc = &xb[ci * l..(ci + 1) * l];
                        for kk in 0..k {
                            let wv = w[(o * c_in + ci) * k + kk];
                            let shift = kk as isize - pad;
                            let (lo, hi) = valid_range(l, shift);
                            let src =
                                &xc[(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (yv, &xv) in yo[lo..hi].iter_mut().zip(src) {
                                *yv += wv * xv;
                            }
                        }
                    }
                }
            });
        Tensor::from_vec(&[b, c_out, l], y)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.input.take().ok_or_else(|| missing_cache("conv1d"))?;
        let (b, _, l) = x.dims3()?;
        dy.expect_shape(&[b, self.c_out, l])?;
        let (c_in, c_out, k, pad) = (self.c_in, self.c_out, self.kernel, self.pad());
        let xd = x.data();
        let dyd = dy.data();

        {
            let dw = self.weight.grad_mut();
            dw.par_chunks_mut(c_in * k)
                .enumerate()
                .for_each(|(o, dwo)| {
                    for bi in 0..b {
                        let dyo = &dyd[(bi * c_out + o) * l..(bi * c_out + o + 1) * l];
                        for ci in 0..c_in {
                            let xc = &xd[(bi * c_in + ci) * l..(bi * c_in + ci + 1) * l];
                            for kk in 0..k {
                                let shift = kk as isize - pad;
                                let (lo, hi) = valid_range(l, shift);
                                let src = &xc[(lo as isize + shift) as usize
                                    ..(hi as isize + shift) as usize];
                                let mut acc = S::zero();
                                for (&g, &xv) in dyo[lo..hi].iter().zip(src) {
                                    acc += g * xv;
                                }
                                dwo[ci * k + kk] += acc;
                            }
                        }
                    }
                });
        }
        {
            let db = self.bias.grad_mut();
            for (o, dbo) in db.iter_mut().enumerate() {
                for bi in 0..b {
                    *dbo += dyd[(bi * c_out + o) * l..(bi * c_out + o + 1) * l]
                        .iter()
                        .copied()
                        .sum::<S>();
                }
            }
        }

        let w = self.weight.data();
        let mut dx = vec![S::zero(); b * c_in * l];
        dx.par_chunks_mut(c_in * l)
            .zip(dyd.par_chunks(c_out * l))
            .for_each(|(dxb, dyb)| {
                for ci in 0..c_in {
                    let dxc = &mut dxb[ci * l..(ci + 1) * l];
                    for o in 0..c_out {
                        let dyo = &dyb[o * l..(o + 1) * l];
                        for kk in 0..k {
                            let wv = w[(o * c_in + ci) * k + kk];
                            let shift = kk as isize - pad;
                            let (lo, hi) = valid_range(l, shift);
                            let dst = &mut dxc
                                [(lo as isize + shift) as usize..(hi as isize + shift) as usize];
                            for (d, &g) in dst.iter_mut().zip(&dyo[lo..hi]) {
                                *d += wv * g;
                            }
                        }
                    }
                }
            });
        Tensor::from_vec(&[b, c_in, l], dx)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_, S>) {
        f(&join(prefix, "weight"), TensorKind::Param, &self.weight);
        f(&join(prefix, "bias"), TensorKind::Param, &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, S>) {
        f(&join(prefix, "weight"), TensorKind::Param, &mut self.weight);
        f(&join(prefix, "bias"), TensorKind::Param, &mut self.bias);
    }
}

/// Per-channel batch normalization over the batch and length axes.
#[derive(Debug, Clone)]
pub struct BatchNorm1d<S: Scalar> {
    pub gamma: Tensor<S>,
    pub beta: Tensor<S>,
    pub running_mean: Tensor<S>,
    pub running_var: Tensor<S>,
    channels: usize,
    cache: Option<BnCache<S>>,
}

#[derive(Debug, Clone)]
struct BnCache<S> {
    xhat: Vec<S>,
    inv_std: Vec<S>,
    dims: (usize, usize, usize),
}

impl<S: Scalar> BatchNorm1d<S> {
    pub fn new(channels: usize) -> Self {
        BatchNorm1d {
            gamma: Tensor::param(&[channels], vec![S::one(); channels]),
            beta: Tensor::param(&[channels], vec![S::zero(); channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], S::one()),
            channels,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check(&self, x: &Tensor<S>) -> Result<(usize, usize, usize)> {
        let dims = x.dims3()?;
        if dims.1 != self.channels {
            return Err(Error::shape(format!("{} channels", self.channels), dims.1));
        }
        Ok(dims)
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, c, l) = self.check(x)?;
        let eps = S::from_f64(BN_EPS);
        let mut y = x.data().to_vec();
        for (i, chunk) in y.chunks_mut(l).enumerate() {
            let ch = i % c;
            let scale = self.gamma.data()[ch] / (self.running_var.data()[ch] + eps).sqrt();
            let shift = self.beta.data()[ch] - scale * self.running_mean.data()[ch];
            chunk.iter_mut().for_each(|v| *v = scale * *v + shift);
        }
        Tensor::from_vec(&[b, c, l], y)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, c, l) = self.check(x)?;
        let count = b * l;
        if count < 2 {
            return Err(Error::Training(
                "batch norm needs at least two values per channel in training mode".into(),
            ));
        }
        let eps = S::from_f64(BN_EPS);
        let momentum = S::from_f64(BN_MOMENTUM);
        let n = S::from_f64(count as f64);
        let xd = x.data();
        let mut xhat = vec![S::zero(); xd.len()];
        let mut y = vec![S::zero(); xd.len()];
        let mut inv_std = vec![S::zero(); c];
        for ch in 0..c {
            let rows = (0..b).map(|bi| (bi * c + ch) * l);
            let mut sum = S::zero();
            for r in rows.clone() {
                sum += xd[r..r + l].iter().copied().sum::<S>();
            }
            let mean = sum / n;
            let mut sq = S::zero();
            for r in rows.clone() {
                sq += xd[r..r + l]
                    .iter()
                    .map(|&v| (v - mean) * (v - mean))
                    .sum::<S>();
            }
            let var = sq / n;
            let is = S::one() / (var + eps).sqrt();
            inv_std[ch] = is;
            let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
            for r in rows {
                for i in r..r + l {
                    let h = (xd[i] - mean) * is;
                    xhat[i] = h;
                    y[i] = g * h + be;
                }
            }
            let unbiased = sq / S::from_f64((count - 1) as f64);
            let rm = &mut self.running_mean.data_mut()[ch];
            *rm = (S::one() - momentum) * *rm + momentum * mean;
            let rv = &mut self.running_var.data_mut()[ch];
            *rv = (S::one() - momentum) * *rv + momentum * unbiased;
        }
        self.cache = Some(BnCache {
            xhat,
            inv_std,
            dims: (b, c, l),
        });
        Tensor::from_vec(&[b, c, l], y)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| missing_cache("batch norm"))?;
        let (b, c, l) = cache.dims;
        dy.expect_shape(&[b, c, l])?;
        let n = S::from_f64((b * l) as f64);
        let dyd = dy.data();
        let mut dx = vec![S::zero(); dyd.len()];
        for ch in 0..c {
            let rows = (0..b).map(|bi| (bi * c + ch) * l);
            let mut sum_dy = S::zero();
            let mut sum_dy_xhat = S::zero();
            for r in rows.clone() {
                for i in r..r + l {
                    sum_dy += dyd[i];
                    sum_dy_xhat += dyd[i] * cache.xhat[i];
                }
            }
            self.gamma.grad_mut()[ch] += sum_dy_xhat;
            self.beta.grad_mut()[ch] += sum_dy;
            let g = self.gamma.data()[ch];
            let k = g * cache.inv_std[ch] / n;
            for r in rows {
                for i in r..r + l {
                    dx[i] = k * (n * dyd[i] - sum_dy - cache.xhat[i] * sum_dy_xhat);
                }
            }
        }
        Tensor::from_vec(&[b, c, l], dx)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_, S>) {
        f(&join(prefix, "gamma"), TensorKind::Param, &self.gamma);
        f(&join(prefix, "beta"), TensorKind::Param, &self.beta);
        f(
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            &self.running_mean,
        );
        f(
            &join(prefix, "running_var"),
            TensorKind::Buffer,
            &self.running_var,
        );
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, S>) {
        f(&join(prefix, "gamma"), TensorKind::Param, &mut self.gamma);
        f(&join(prefix, "beta"), TensorKind::Param, &mut self.beta);
        f(
            &join(prefix, "running_mean"),
            TensorKind::Buffer,
            &mut self.running_mean,
        );
        f(
            &join(prefix, "running_var"),
            TensorKind::Buffer,
            &mut self.running_var,
        );
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    mask: Option<(Vec<usize>, Vec<bool>)>,
}

impl Relu {
    pub fn new() -> Self {
        Relu::default()
    }

    pub fn infer<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = x.data().iter().map(|&v| v.max(S::zero())).collect();
        Tensor::from_vec(x.shape(), y)
    }

    pub fn forward<S: Scalar>(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mask = x.data().iter().map(|&v| v > S::zero()).collect();
        self.mask = Some((x.shape().to_vec(), mask));
        self.infer(x)
    }

    pub fn backward<S: Scalar>(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let (shape, mask) = self.mask.take().ok_or_else(|| missing_cache("relu"))?;
        dy.expect_shape(&shape)?;
        let dx = dy
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &on)| if on { g } else { S::zero() })
            .collect();
        Tensor::from_vec(&shape, dx)
    }
}

/// Max pooling along the length axis. A trailing partial window is dropped;
/// on ties the first element wins.
#[derive(Debug, Clone)]
pub struct MaxPool1d {
    kernel: usize,
    stride: usize,
    cache: Option<(Vec<usize>, Vec<usize>)>,
}

impl MaxPool1d {
    pub fn new(kernel: usize, stride: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::Config(
                "max-pool kernel and stride must be positive".into(),
            ));
        }
        Ok(MaxPool1d {
            kernel,
            stride,
            cache: None,
        })
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn out_len(&self, l: usize) -> usize {
        if l < self.kernel {
            0
        } else {
            (l - self.kernel) / self.stride + 1
        }
    }

    fn pool<S: Scalar>(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Vec<usize>)> {
        let (b, c, l) = x.dims3()?;
        let lo = self.out_len(l);
        if lo == 0 {
            return Err(Error::shape(format!("length >= {}", self.kernel), l));
        }
        let xd = x.data();
        let mut y = Vec::with_capacity(b * c * lo);
        let mut idx = Vec::with_capacity(b * c * lo);
        for row in 0..b * c {
            let base = row * l;
            for t in 0..lo {
                let start = base + t * self.stride;
                let mut best = start;
                for i in start + 1..start + self.kernel {
                    if xd[i] > xd[best] {
                        best = i;
                    }
                }
                y.push(xd[best]);
                idx.push(best);
            }
        }
        Ok((Tensor::from_vec(&[b, c, lo], y)?, idx))
    }

    pub fn infer<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.pool(x)?.0)
    }

    pub fn forward<S: Scalar>(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (y, idx) = self.pool(x)?;
        self.cache = Some((x.shape().to_vec(), idx));
        Ok(y)
    }

    pub fn backward<S: Scalar>(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let (shape, idx) = self.cache.take().ok_or_else(|| missing_cache("max-pool"))?;
        if dy.len() != idx.len() {
            return Err(Error::shape(idx.len(), dy.len()));
        }
        let mut dx = Tensor::zeros(&shape);
        let d = dx.data_mut();
        for (&i, &g) in idx.iter().zip(dy.data()) {
            d[i] += g;
        }
        Ok(dx)
    }
}

/// `[B, C, L] -> [B, C * L]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn new() -> Self {
        Flatten::default()
    }

    pub fn infer<S: Scalar>(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let b = *x
            .shape()
            .first()
            .ok_or_else(|| Error::shape("[B, ...]", "[]"))?;
        let f = x.len().checked_div(b).unwrap_or(0);
        x.clone().reshape(&[b, f])
    }

    pub fn forward<S: Scalar>(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        self.shape = Some(x.shape().to_vec());
        self.infer(x)
    }

    pub fn backward<S: Scalar>(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let shape = self.shape.take().ok_or_else(|| missing_cache("flatten"))?;
        dy.clone().reshape(&shape)
    }
}

/// Fully connected layer `y = W x + b`.
#[derive(Debug, Clone)]
pub struct Linear<S: Scalar> {
    /// `[out, in]`
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
    in_features: usize,
    out_features: usize,
    input: Option<Tensor<S>>,
}

impl<S: Scalar> Linear<S> {
    pub fn new<R: Rng + ?Sized>(
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config("linear layer needs positive sizes".into()));
        }
        let weight = normal_vec(
            out_features * in_features,
            (1.0 / in_features as f64).sqrt(),
            rng,
        );
        Ok(Linear {
            weight: Tensor::param(&[out_features, in_features], weight),
            bias: Tensor::param(&[out_features], vec![S::zero(); out_features]),
            in_features,
            out_features,
            input: None,
        })
    }

    pub fn in_features(&self) -> usize {
        self.in_features
    }

    pub fn out_features(&self) -> usize {
        self.out_features
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let (b, f) = x.dims2()?;
        if f != self.in_features {
            return Err(Error::shape(format!("{} features", self.in_features), f));
        }
        let (fin, fout) = (self.in_features, self.out_features);
        let w = self.weight.data();
        let bias = self.bias.data();
        let mut y = vec![S::zero(); b * fout];
        y.par_chunks_mut(fout)
            .zip(x.data().par_chunks(fin))
            .for_each(|(yb, xb)| {
                for (o, yo) in yb.iter_mut().enumerate() {
                    let row = &w[o * fin..(o + 1) * fin];
                    *yo = bias[o] + row.iter().zip(xb).map(|(&a, &v)| a * v).sum::<S>();
                }
            });
        Tensor::from_vec(&[b, fout], y)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = self.infer(x)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let x = self.input.take().ok_or_else(|| missing_cache("linear"))?;
        let (b, _) = x.dims2()?;
        let (fin, fout) = (self.in_features, self.out_features);
        dy.expect_shape(&[b, fout])?;
        let (xd, dyd) = (x.data(), dy.data());
        self.weight
            .grad_mut()
            .par_chunks_mut(fin)
            .enumerate()
            .for_each(|(o, dwo)| {
                for bi in 0..b {
                    let g = dyd[bi * fout + o];
                    for (d, &v) in dwo.iter_mut().zip(&xd[bi * fin..(bi + 1) * fin]) {
                        *d += g * v;
                    }
                }
            });
        {
            let db = self.bias.grad_mut();
            for bi in 0..b {
                for (d, &g) in db.iter_mut().zip(&dyd[bi * fout..(bi + 1) * fout]) {
                    *d += g;
                }
            }
        }
        let w = self.weight.data();
        let mut dx = vec![S::zero(); b * fin];
        dx.par_chunks_mut(fin)
            .zip(dyd.par_chunks(fout))
            .for_each(|(dxb, dyb)| {
                for (o, &g) in dyb.iter().enumerate() {
                    for (d, &wv) in dxb.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                        *d += g * wv;
                    }
                }
            });
        Tensor::from_vec(&[b, fin], dx)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_, S>) {
        f(&join(prefix, "weight"), TensorKind::Param, &self.weight);
        f(&join(prefix, "bias"), TensorKind::Param, &self.bias);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, S>) {
        f(&join(prefix, "weight"), TensorKind::Param, &mut self.weight);
        f(&join(prefix, "bias"), TensorKind::Param, &mut self.bias);
    }
}

pub const RES_KERNELS: [usize; 3] = [7, 5, 3];

/// Residual block: three conv/BN stages with kernels 7, 5, 3 plus a shortcut
/// (identity, or 1x1 conv + BN when the channel count changes), followed by
/// a ReLU on the sum.
#[derive(Debug, Clone)]
pub struct ResBlock<S: Scalar> {
    pub convs: [Conv1d<S>; 3],
    pub norms: [BatchNorm1d<S>; 3],
    pub shortcut: Option<(Conv1d<S>, BatchNorm1d<S>)>,
    relus: [Relu; 3],
}

impl<S: Scalar> ResBlock<S> {
    pub fn new<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Result<Self> {
        let convs = [
            Conv1d::new(c_in, c_out, RES_KERNELS[0], rng)?,
            Conv1d::new(c_out, c_out, RES_KERNELS[1], rng)?,
            Conv1d::new(c_out, c_out, RES_KERNELS[2], rng)?,
        ];
        let shortcut = if c_in != c_out {
            Some((Conv1d::new(c_in, c_out, 1, rng)?, BatchNorm1d::new(c_out)))
        } else {
            None
        };
        Ok(ResBlock {
            convs,
            norms: [
                BatchNorm1d::new(c_out),
                BatchNorm1d::new(c_out),
                BatchNorm1d::new(c_out),
            ],
            shortcut,
            relus: Default::default(),
        })
    }

    pub fn in_channels(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.convs[0].out_channels()
    }

    pub fn infer(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for i in 0..3 {
            h = self.norms[i].infer(&self.convs[i].infer(&h)?)?;
            if i < 2 {
                h = self.relus[i].infer(&h)?;
            }
        }
        let s = match &self.shortcut {
            Some((conv, bn)) => bn.infer(&conv.infer(x)?)?,
            None => x.clone(),
        };
        add_assign(&mut h, &s)?;
        self.relus[2].infer(&h)
    }

    pub fn forward(&mut self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let mut h = x.clone();
        for i in 0..3 {
            h = self.convs[i].forward(&h)?;
            h = self.norms[i].forward(&h)?;
            if i < 2 {
                h = self.relus[i].forward(&h)?;
            }
        }
        let s = match &mut self.shortcut {
            Some((conv, bn)) => bn.forward(&conv.forward(x)?)?,
            None => x.clone(),
        };
        add_assign(&mut h, &s)?;
        self.relus[2].forward(&h)
    }

    pub fn backward(&mut self, dy: &Tensor<S>) -> Result<Tensor<S>> {
        let dz = self.relus[2].backward(dy)?;
        let mut d = dz.clone();
        for i in (0..3).rev() {
            if i < 2 {
                d = self.relus[i].backward(&d)?;
            }
            d = self.norms[i].backward(&d)?;
            d = self.convs[i].backward(&d)?;
        }
        let ds = match &mut self.shortcut {
            Some((conv, bn)) => conv.backward(&bn.backward(&dz)?)?,
            None => dz,
        };
        add_assign(&mut d, &ds)?;
        Ok(d)
    }

    pub fn visit(&self, prefix: &str, f: &mut Visitor<'_, S>) {
        for i in 0..3 {
            self.convs[i].visit(&join(prefix, &format!("conv{}", i + 1)), f);
            self.norms[i].visit(&join(prefix, &format!("bn{}", i + 1)), f);
        }
        if let Some((conv, bn)) = &self.shortcut {
            conv.visit(&join(prefix, "shortcut.conv"), f);
            bn.visit(&join(prefix, "shortcut.bn"), f);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut VisitorMut<'_, S>) {
        for i in 0..3 {
            self.convs[i].visit_mut(&join(prefix, &format!("conv{}", i + 1)), f);
            self.norms[i].visit_mut(&join(prefix, &format!("bn{}", i + 1)), f);
        }
        if let Some((conv, bn)) = &mut self.shortcut {
            conv.visit_mut(&join(prefix, "shortcut.conv"), f);
            bn.visit_mut(&join(prefix, "shortcut.bn"), f);
        }
    }
}

fn add_assign<S: Scalar>(a: &mut Tensor<S>, b: &Tensor<S>) -> Result<()> {
    b.expect_shape(a.shape())?;
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(())
}
