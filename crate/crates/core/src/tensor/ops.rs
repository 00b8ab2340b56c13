//! Differentiable layer operations recorded on a [`Tape`].

use rand::Rng;

use super::tape::{Op, Tape, Var};
use super::{Mode, Result, Scalar, Tensor, TensorError};

/// Running statistics and hyperparameters of a 1-D batch normalisation layer.
/// The affine `gamma`/`beta` are ordinary parameters passed as tape leaves.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormStats<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    pub eps: T,
}

impl<T: Scalar> BatchNormStats<T> {
    /// Zero mean, unit variance, momentum 0.1, eps 1e-5.
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::from_f64_lossy(0.1),
            eps: T::from_f64_lossy(1e-5),
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Shape { op, detail }
}

fn pre_err(op: &'static str, detail: String) -> TensorError {
    TensorError::Precondition { op, detail }
}

/// Unfolds one batch item `[cin, t_in]` into `[cin * k, t_out]` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cin: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    cols: &mut [T],
) {
    for ci in 0..cin {
        let src = &x[ci * t_in..(ci + 1) * t_in];
        for kk in 0..k {
            let row = &mut cols[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            for (t, out) in row.iter_mut().enumerate() {
                let pos = t * stride + kk;
                *out = if pos >= pad && pos - pad < t_in {
                    src[pos - pad]
                } else {
                    T::zero()
                };
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im_add<T: Scalar>(
    cols: &[T],
    cin: usize,
    t_in: usize,
    k: usize,
    stride: usize,
    pad: usize,
    t_out: usize,
    dx: &mut [T],
) {
    for ci in 0..cin {
        let dst = &mut dx[ci * t_in..(ci + 1) * t_in];
        for kk in 0..k {
            let row = &cols[(ci * k + kk) * t_out..(ci * k + kk + 1) * t_out];
            for (t, &g) in row.iter().enumerate() {
                let pos = t * stride + kk;
                if pos >= pad && pos - pad < t_in {
                    dst[pos - pad] = dst[pos - pad] + g;
                }
            }
        }
    }
}

/// Samples an inverted-dropout mask: 0 with probability `p`, else `1/(1-p)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(numel: usize, p: f64, rng: &mut R) -> Vec<T> {
    let keep = T::from_f64_lossy(1.0 / (1.0 - p));
    (0..numel)
        .map(|_| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
        .collect()
}

impl<T: Scalar> Tape<T> {
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.shape() != vb.shape() {
            return Err(shape_err(
                "add",
                format!("{:?} vs {:?}", va.shape(), vb.shape()),
            ));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// `sum(x * weights)` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, weights: &Tensor<T>) -> Result<Var> {
        let vx = self.value(x);
        if vx.shape() != weights.shape() {
            return Err(shape_err(
                "weighted_sum",
                format!("{:?} vs {:?}", vx.shape(), weights.shape()),
            ));
        }
        let s = vx
            .data()
            .iter()
            .zip(weights.data())
            .map(|(&a, &w)| a * w)
            .sum();
        Ok(self.push(
            Tensor::scalar(s),
            Op::WeightedSum {
                input: x,
                weights: weights.data().to_vec(),
            },
            &[x],
        ))
    }

    /// 1-D cross-correlation over `[batch, in_ch, T]` with zero padding.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 3 || ws.len() != 3 {
            return Err(shape_err(
                "conv1d",
                format!("input {xs:?} and weight {ws:?} must both be rank 3"),
            ));
        }
        let (batch, cin, t_in) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        if wcin != cin {
            return Err(shape_err(
                "conv1d",
                format!("input {xs:?} has {cin} channels but weight {ws:?} expects {wcin}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [cout] {
                return Err(shape_err(
                    "conv1d",
                    format!("bias {:?} vs {cout} output channels", self.shape(b)),
                ));
            }
        }
        if stride == 0 {
            return Err(pre_err("conv1d", "stride must be >= 1".into()));
        }
        if k > t_in + 2 * padding {
            return Err(pre_err(
                "conv1d",
                format!("kernel {k} longer than padded input {}", t_in + 2 * padding),
            ));
        }
        let t_out = (t_in + 2 * padding - k) / stride + 1;
        let ck = cin * k;
        let x = self.value(input).data();
        let w = self.value(weight).data();
        let mut out = vec![T::zero(); batch * cout * t_out];
        let mut cols = vec![T::zero(); ck * t_out];
        for b in 0..batch {
            im2col(
                &x[b * cin * t_in..(b + 1) * cin * t_in],
                cin,
                t_in,
                k,
                stride,
                padding,
                t_out,
                &mut cols,
            );
            let ob = &mut out[b * cout * t_out..(b + 1) * cout * t_out];
            if let Some(bv) = bias {
                let bias_vals = self.value(bv).data();
                for (o, row) in ob.chunks_mut(t_out).enumerate() {
                    row.fill(bias_vals[o]);
                }
            }
            T::gemm(
                cout,
                ck,
                t_out,
                T::one(),
                w,
                ck as isize,
                1,
                &cols,
                t_out as isize,
                1,
                T::one(),
                ob,
                t_out as isize,
                1,
            );
        }
        let out = Tensor::new(vec![batch, cout, t_out], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            },
            &inputs,
        ))
    }

    /// Batch normalisation over `[batch, ch, T]`, statistics per channel.
    ///
    /// Train mode normalises with the biased batch variance and moves the
    /// running estimates towards the batch statistics by `momentum`.
    pub fn batchnorm1d(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BatchNormStats<T>,
        mode: Mode,
    ) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 {
            return Err(shape_err("batchnorm1d", format!("input {xs:?} must be rank 3")));
        }
        let (batch, ch, t) = (xs[0], xs[1], xs[2]);
        for (name, v) in [("gamma", gamma), ("beta", beta)] {
            if self.shape(v) != [ch] {
                return Err(shape_err(
                    "batchnorm1d",
                    format!("{name} {:?} vs {ch} channels", self.shape(v)),
                ));
            }
        }
        if stats.running_mean.len() != ch || stats.running_var.len() != ch {
            return Err(shape_err(
                "batchnorm1d",
                format!("running stats sized {} vs {ch} channels", stats.running_mean.len()),
            ));
        }
        if !(stats.eps > T::zero()) {
            return Err(pre_err("batchnorm1d", "epsilon must be positive".into()));
        }
        let n = batch * t;
        if mode == Mode::Train && n < 2 {
            return Err(pre_err(
                "batchnorm1d",
                format!("train mode needs batch*T >= 2 per channel, got {n}"),
            ));
        }
        let x = self.value(input).data();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = vec![T::zero(); x.len()];
        let mut out = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); ch];
        let n_t = T::from_usize(n).unwrap();
        for c in 0..ch {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut s = T::zero();
                    for b in 0..batch {
                        s = s + x[(b * ch + c) * t..(b * ch + c + 1) * t]
                            .iter()
                            .copied()
                            .sum::<T>();
                    }
                    let mean = s / n_t;
                    let mut ss = T::zero();
                    for b in 0..batch {
                        ss = ss
                            + x[(b * ch + c) * t..(b * ch + c + 1) * t]
                                .iter()
                                .map(|&v| (v - mean) * (v - mean))
                                .sum::<T>();
                    }
                    let var = ss / n_t;
                    let m = stats.momentum;
                    stats.running_mean[c] = (T::one() - m) * stats.running_mean[c] + m * mean;
                    stats.running_var[c] = (T::one() - m) * stats.running_var[c] + m * var;
                    (mean, var)
                }
                Mode::Eval => (stats.running_mean[c], stats.running_var[c]),
            };
            let is = T::one() / (var + stats.eps).sqrt();
            inv_std[c] = is;
            for b in 0..batch {
                let base = (b * ch + c) * t;
                for i in base..base + t {
                    let h = (x[i] - mean) * is;
                    xhat[i] = h;
                    out[i] = g[c] * h + be[c];
                }
            }
        }
        let out = Tensor::new(xs, out)?;
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats: mode == Mode::Train,
            },
            &[input, gamma, beta],
        ))
    }

    /// Exponential linear unit.
    pub fn elu(&mut self, input: Var, alpha: T) -> Var {
        let x = self.value(input).data();
        let data: Vec<T> = x
            .iter()
            .map(|&v| {
                if v > T::zero() {
                    v
                } else {
                    alpha * (v.exp() - T::one())
                }
            })
            .collect();
        let out = Tensor::new(self.shape(input).to_vec(), data).expect("same shape");
        self.push(out, Op::Elu { input, alpha }, &[input])
    }

    /// Inverted dropout. Eval mode and `p == 0` return `input` itself.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: Var,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(pre_err("dropout", format!("p must lie in [0, 1), got {p}")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(input);
        }
        let mask = dropout_mask(self.value(input).numel(), p, rng);
        self.apply_mask(input, mask)
    }

    /// Multiplies by a fixed mask and routes gradients through the same mask.
    pub fn apply_mask(&mut self, input: Var, mask: Vec<T>) -> Result<Var> {
        let x = self.value(input);
        if mask.len() != x.numel() {
            return Err(shape_err(
                "dropout",
                format!("mask of {} for {} elements", mask.len(), x.numel()),
            ));
        }
        let data = x.data().iter().zip(&mask).map(|(&a, &m)| a * m).collect();
        let out = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Dropout { input, mask }, &[input]))
    }

    /// Max pooling over the last axis of `[batch, ch, T]`. Ties resolve to
    /// the first maximal element in the window.
    pub fn maxpool1d(&mut self, input: Var, kernel: usize, stride: usize) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 3 {
            return Err(shape_err("maxpool1d", format!("input {xs:?} must be rank 3")));
        }
        if kernel == 0 || stride == 0 {
            return Err(pre_err("maxpool1d", "kernel and stride must be >= 1".into()));
        }
        let (batch, ch, t) = (xs[0], xs[1], xs[2]);
        if kernel > t {
            return Err(pre_err(
                "maxpool1d",
                format!("kernel {kernel} exceeds input length {t}"),
            ));
        }
        let t_out = (t - kernel) / stride + 1;
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(batch * ch * t_out);
        let mut argmax = Vec::with_capacity(batch * ch * t_out);
        for row in 0..batch * ch {
            let base = row * t;
            for j in 0..t_out {
                let start = base + j * stride;
                let mut best = start;
                for i in start + 1..start + kernel {
                    if x[i] > x[best] {
                        best = i;
                    }
                }
                out.push(x[best]);
                argmax.push(best);
            }
        }
        let out = Tensor::new(vec![batch, ch, t_out], out)?;
        Ok(self.push(out, Op::MaxPool { input, argmax }, &[input]))
    }

    /// Affine map `input · weightᵀ + bias` for `[batch, in]` inputs.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        let ws = self.shape(weight).to_vec();
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] {
            return Err(shape_err(
                "linear",
                format!("input {xs:?} incompatible with weight {ws:?}"),
            ));
        }
        let (batch, fin, fout) = (xs[0], xs[1], ws[0]);
        if let Some(b) = bias {
            if self.shape(b) != [fout] {
                return Err(shape_err(
                    "linear",
                    format!("bias {:?} vs {fout} outputs", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); batch * fout];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(
            batch,
            fin,
            fout,
            T::one(),
            self.value(input).data(),
            fin as isize,
            1,
            self.value(weight).data(),
            1,
            fin as isize,
            T::one(),
            &mut out,
            fout as isize,
            1,
        );
        let out = Tensor::new(vec![batch, fout], out)?;
        let mut inputs = vec![input, weight];
        inputs.extend(bias);
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &inputs,
        ))
    }

    /// Row-wise softmax of `[batch, n]`, max-subtracted.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let xs = self.shape(input).to_vec();
        if xs.len() != 2 {
            return Err(shape_err("softmax", format!("input {xs:?} must be rank 2")));
        }
        let n = xs[1];
        let mut out = self.value(input).data().to_vec();
        for row in out.chunks_mut(n) {
            let m = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s = s + *v;
            }
            for v in row.iter_mut() {
                *v = *v / s;
            }
        }
        let out = Tensor::new(xs, out)?;
        Ok(self.push(out, Op::Softmax { input }, &[input]))
    }

    /// Mean squared error over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        let (p, t) = (self.value(pred), self.value(target));
        if p.shape() != t.shape() {
            return Err(shape_err(
                "mse_loss",
                format!("pred {:?} vs target {:?}", p.shape(), t.shape()),
            ));
        }
        let n = T::from_usize(p.numel()).unwrap();
        let s: T = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { pred, target }, &[pred, target]))
    }

    pub(crate) fn backward_node(&self, idx: usize, gout: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    self.accumulate(grads, v, |g| {
                        g.iter_mut().zip(gout).for_each(|(d, &s)| *d = *d + s)
                    });
                }
            }
            Op::Reshape(x) => self.accumulate(grads, *x, |g| {
                g.iter_mut().zip(gout).for_each(|(d, &s)| *d = *d + s)
            }),
            Op::Sum(x) => {
                let s = gout[0];
                self.accumulate(grads, *x, |g| g.iter_mut().for_each(|d| *d = *d + s));
            }
            Op::WeightedSum { input, weights } => {
                let s = gout[0];
                self.accumulate(grads, *input, |g| {
                    g.iter_mut()
                        .zip(weights)
                        .for_each(|(d, &w)| *d = *d + s * w)
                });
            }
            Op::Conv1d {
                input,
                weight,
                bias,
                stride,
                padding,
            } => self.conv1d_backward(*input, *weight, *bias, *stride, *padding, gout, grads),
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let xs = self.shape(*input);
                let (batch, ch, t) = (xs[0], xs[1], xs[2]);
                let gam = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); ch];
                let mut dbeta = vec![T::zero(); ch];
                for c in 0..ch {
                    for b in 0..batch {
                        let base = (b * ch + c) * t;
                        for i in base..base + t {
                            dgamma[c] = dgamma[c] + gout[i] * xhat[i];
                            dbeta[c] = dbeta[c] + gout[i];
                        }
                    }
                }
                let n = T::from_usize(batch * t).unwrap();
                self.accumulate(grads, *input, |g| {
                    for c in 0..ch {
                        let scale = gam[c] * inv_std[c];
                        for b in 0..batch {
                            let base = (b * ch + c) * t;
                            for i in base..base + t {
                                let d = if *batch_stats {
                                    scale * (gout[i] - dbeta[c] / n - xhat[i] * dgamma[c] / n)
                                } else {
                                    scale * gout[i]
                                };
                                g[i] = g[i] + d;
                            }
                        }
                    }
                });
                self.accumulate(grads, *gamma, |g| {
                    g.iter_mut().zip(&dgamma).for_each(|(d, &s)| *d = *d + s)
                });
                self.accumulate(grads, *beta, |g| {
                    g.iter_mut().zip(&dbeta).for_each(|(d, &s)| *d = *d + s)
                });
            }
            Op::Elu { input, alpha } => {
                let x = self.value(*input).data();
                self.accumulate(grads, *input, |g| {
                    for ((d, &s), &v) in g.iter_mut().zip(gout).zip(x) {
                        let dv = if v > T::zero() { s } else { s * *alpha * v.exp() };
                        *d = *d + dv;
                    }
                });
            }
            Op::Dropout { input, mask } => self.accumulate(grads, *input, |g| {
                for ((d, &s), &m) in g.iter_mut().zip(gout).zip(mask) {
                    *d = *d + s * m;
                }
            }),
            Op::MaxPool { input, argmax } => self.accumulate(grads, *input, |g| {
                for (&s, &i) in gout.iter().zip(argmax) {
                    g[i] = g[i] + s;
                }
            }),
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let xs = self.shape(*input);
                let (batch, fin) = (xs[0], xs[1]);
                let fout = self.shape(*weight)[0];
                let x = self.value(*input).data();
                let w = self.value(*weight).data();
                self.accumulate(grads, *input, |g| {
                    T::gemm(
                        batch,
                        fout,
                        fin,
                        T::one(),
                        gout,
                        fout as isize,
                        1,
                        w,
                        fin as isize,
                        1,
                        T::one(),
                        g,
                        fin as isize,
                        1,
                    )
                });
                self.accumulate(grads, *weight, |g| {
                    T::gemm(
                        fout,
                        batch,
                        fin,
                        T::one(),
                        gout,
                        1,
                        fout as isize,
                        x,
                        fin as isize,
                        1,
                        T::one(),
                        g,
                        fin as isize,
                        1,
                    )
                });
                if let Some(b) = bias {
                    self.accumulate(grads, *b, |g| {
                        for row in gout.chunks(fout) {
                            g.iter_mut().zip(row).for_each(|(d, &s)| *d = *d + s);
                        }
                    });
                }
            }
            Op::Softmax { input } => {
                let n = node.value.shape()[1];
                let y = node.value.data();
                self.accumulate(grads, *input, |g| {
                    for ((grow, yrow), srow) in
                        g.chunks_mut(n).zip(y.chunks(n)).zip(gout.chunks(n))
                    {
                        let dot: T = yrow.iter().zip(srow).map(|(&a, &b)| a * b).sum();
                        for ((d, &yv), &s) in grow.iter_mut().zip(yrow).zip(srow) {
                            *d = *d + yv * (s - dot);
                        }
                    }
                });
            }
            Op::Mse { pred, target } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = gout[0] * T::from_f64_lossy(2.0) / T::from_usize(p.len()).unwrap();
                self.accumulate(grads, *pred, |g| {
                    for ((d, &a), &b) in g.iter_mut().zip(p).zip(t) {
                        *d = *d + scale * (a - b);
                    }
                });
                self.accumulate(grads, *target, |g| {
                    for ((d, &a), &b) in g.iter_mut().zip(p).zip(t) {
                        *d = *d - scale * (a - b);
                    }
                });
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn conv1d_backward(
        &self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        gout: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let xs = self.shape(input);
        let (batch, cin, t_in) = (xs[0], xs[1], xs[2]);
        let ws = self.shape(weight);
        let (cout, k) = (ws[0], ws[2]);
        let t_out = gout.len() / (batch * cout);
        let ck = cin * k;
        let x = self.value(input).data();
        let w = self.value(weight).data();

        if let Some(b) = bias {
            self.accumulate(grads, b, |g| {
                for b in 0..batch {
                    for o in 0..cout {
                        let row = &gout[(b * cout + o) * t_out..(b * cout + o + 1) * t_out];
                        g[o] = g[o] + row.iter().copied().sum::<T>();
                    }
                }
            });
        }

        let need_w = self.requires_grad(weight);
        let need_x = self.requires_grad(input);
        let mut cols = vec![T::zero(); ck * t_out];
        if need_w {
            self.accumulate(grads, weight, |gw| {
                for b in 0..batch {
                    im2col(
                        &x[b * cin * t_in..(b + 1) * cin * t_in],
                        cin,
                        t_in,
                        k,
                        stride,
                        padding,
                        t_out,
                        &mut cols,
                    );
                    let gb = &gout[b * cout * t_out..(b + 1) * cout * t_out];
                    // dW += gout_b [cout, t_out] x cols_bᵀ [t_out, ck]
                    T::gemm(
                        cout,
                        t_out,
                        ck,
                        T::one(),
                        gb,
                        t_out as isize,
                        1,
                        &cols,
                        1,
                        t_out as isize,
                        T::one(),
                        gw,
                        ck as isize,
                        1,
                    );
                }
            });
        }
        if need_x {
            self.accumulate(grads, input, |gx| {
                for b in 0..batch {
                    let gb = &gout[b * cout * t_out..(b + 1) * cout * t_out];
                    // dcols = Wᵀ [ck, cout] x gout_b [cout, t_out]
                    T::gemm(
                        ck,
                        cout,
                        t_out,
                        T::one(),
                        w,
                        1,
                        ck as isize,
                        gb,
                        t_out as isize,
                        1,
                        T::zero(),
                        &mut cols,
                        t_out as isize,
                        1,
                    );
                    col2im_add(
                        &cols,
                        cin,
                        t_in,
                        k,
                        stride,
                        padding,
                        t_out,
                        &mut gx[b * cin * t_in..(b + 1) * cin * t_in],
                    );
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    fn brute_conv(
        x: &[f64],
        w: &[f64],
        bias: &[f64],
        (batch, cin, t): (usize, usize, usize),
        (cout, k): (usize, usize),
        stride: usize,
        pad: usize,
    ) -> Vec<f64> {
        let t_out = (t + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0; batch * cout * t_out];
        for b in 0..batch {
            for o in 0..cout {
                for j in 0..t_out {
                    let mut acc = bias[o];
                    for c in 0..cin {
                        for kk in 0..k {
                            let pos = (j * stride + kk) as isize - pad as isize;
                            if pos >= 0 && (pos as usize) < t {
                                acc += w[(o * cin + c) * k + kk] * x[(b * cin + c) * t + pos as usize];
                            }
                        }
                    }
                    out[(b * cout + o) * t_out + j] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 1, 4], &[1.0, -2.0, 3.5, 4.0]));
        let w = tape.constant(t64(&[1, 1, 1], &[1.0]));
        let b = tape.constant(t64(&[1], &[0.0]));
        let y = tape.conv1d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0, 3.5, 4.0]);
    }

    #[test]
    fn conv_sliding_dot_product() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 1, 3], &[1.0, 2.0, 3.0]));
        let w = tape.constant(t64(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let y = tape.conv1d(x, w, None, 1, 0).unwrap();
        assert_eq!(tape.value(y).data(), &[-2.0]);
    }

    #[test]
    fn conv_output_length_formula() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[2, 10, 150]));
        let w = tape.constant(Tensor::zeros(&[64, 10, 11]));
        let b = tape.constant(Tensor::zeros(&[64]));
        let y = tape.conv1d(x, w, Some(b), 1, 5).unwrap();
        assert_eq!(tape.shape(y), &[2, 64, 150]);
        let y = tape.conv1d(x, w, Some(b), 3, 0).unwrap();
        assert_eq!(tape.shape(y), &[2, 64, (150 - 11) / 3 + 1]);
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 8]));
        let w = tape.constant(Tensor::zeros(&[2, 4, 3]));
        let err = tape.conv1d(x, w, None, 1, 0).unwrap_err().to_string();
        assert!(err.contains("[1, 3, 8]") && err.contains("[2, 4, 3]"), "{err}");
    }

    #[test]
    fn conv_matches_triple_loop_oracle() {
        let mut rng = seed::rng(11);
        for &(batch, cin, t, cout, k, stride, pad) in &[
            (4usize, 8usize, 64usize, 5usize, 7usize, 1usize, 3usize),
            (2, 3, 17, 4, 5, 2, 0),
            (3, 8, 64, 8, 11, 1, 5),
            (1, 1, 9, 2, 9, 1, 4),
        ] {
            let x: Vec<f64> = (0..batch * cin * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..cout * cin * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: Vec<f64> = (0..cout).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::<f64>::new();
            let xv = tape.constant(t64(&[batch, cin, t], &x));
            let wv = tape.constant(t64(&[cout, cin, k], &w));
            let bv = tape.constant(t64(&[cout], &bias));
            let y = tape.conv1d(xv, wv, Some(bv), stride, pad).unwrap();
            let oracle = brute_conv(&x, &w, &bias, (batch, cin, t), (cout, k), stride, pad);
            for (a, b) in tape.value(y).data().iter().zip(&oracle) {
                assert!((a - b).abs() < 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn batchnorm_train_statistics() {
        let mut rng = seed::rng(3);
        let (batch, ch, t) = (4, 3, 50);
        let x: Vec<f64> = (0..batch * ch * t)
            .map(|i| 3.0 * rng.gen_range(-1.0..1.0) + (i % 7) as f64)
            .collect();
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(t64(&[batch, ch, t], &x));
        let g = tape.param(Tensor::full(&[ch], 1.0));
        let b = tape.param(Tensor::zeros(&[ch]));
        let mut stats = BatchNormStats::new(ch);
        let y = tape.batchnorm1d(xv, g, b, &mut stats, Mode::Train).unwrap();
        let y = tape.value(y).data();
        for c in 0..ch {
            let vals: Vec<f64> = (0..batch)
                .flat_map(|bi| y[(bi * ch + c) * t..(bi * ch + c + 1) * t].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-6);
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
        assert!(stats.running_var.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn batchnorm_constant_channel_gives_beta() {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::full(&[2, 2, 5], 3.25));
        let g = tape.param(Tensor::full(&[2], 1.0));
        let b = tape.param(Tensor::full(&[2], 5.0));
        let mut stats = BatchNormStats::new(2);
        let y = tape.batchnorm1d(xv, g, b, &mut stats, Mode::Train).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 5.0));
    }

    #[test]
    fn batchnorm_eval_uses_running_stats() {
        let x = [0.5, -1.5, 2.0, 4.0];
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(t64(&[1, 1, 4], &x));
        let g = tape.param(Tensor::full(&[1], 1.0));
        let b = tape.param(Tensor::zeros(&[1]));
        let mut stats = BatchNormStats::new(1);
        let y = tape.batchnorm1d(xv, g, b, &mut stats, Mode::Eval).unwrap();
        for (o, i) in tape.value(y).data().iter().zip(x) {
            assert!((o - i / (1.0f64 + 1e-5).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn batchnorm_single_element_train_is_error() {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(Tensor::full(&[1, 2, 1], 1.0));
        let g = tape.param(Tensor::full(&[2], 1.0));
        let b = tape.param(Tensor::zeros(&[2]));
        let mut stats = BatchNormStats::new(2);
        assert!(tape.batchnorm1d(xv, g, b, &mut stats, Mode::Train).is_err());
        assert!(tape.batchnorm1d(xv, g, b, &mut stats, Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(t64(&[1, 1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let g = tape.param(Tensor::full(&[1], 1.0));
        let b = tape.param(Tensor::zeros(&[1]));
        let mut stats = BatchNormStats::new(1);
        tape.batchnorm1d(xv, g, b, &mut stats, Mode::Train).unwrap();
        assert!((stats.running_mean[0] - 0.25).abs() < 1e-12);
        assert!((stats.running_var[0] - (0.9 + 0.1 * 1.25)).abs() < 1e-12);
    }

    #[test]
    fn elu_values() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[4], &[0.0, 1.0, -1.0, -30.0]));
        let y = tape.elu(x, 1.0);
        let y = tape.value(y).data();
        assert_eq!(y[0], 0.0);
        assert_eq!(y[1], 1.0);
        assert!((y[2] - (-0.632_120_558_828_557_7)).abs() < 1e-12);
        assert!((y[3] + 1.0).abs() < 1e-9);
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = seed::rng(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::from_fn(&[3, 7], |i| i as f32 * 0.3 - 1.0));
        let before = tape.value(x).clone();
        let y = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
        assert_eq!(tape.value(y), &before);
        let y = tape.dropout(x, 0.7, Mode::Eval, &mut rng).unwrap();
        assert_eq!(tape.value(y), &before);
        assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let n = 100_000;
        let mut rng = seed::rng(99);
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[n], 1.0));
        let y = tape.dropout(x, 0.5, Mode::Train, &mut rng).unwrap();
        let v = tape.value(y).data();
        let mean = v.iter().sum::<f64>() / n as f64;
        // per-element std is 1 for p = 0.5 with scale 2
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn maxpool_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 1, 4], &[1.0, 3.0, 2.0, 5.0]));
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, 5.0]);
        let y = tape.maxpool1d(x, 1, 1).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 3.0, 2.0, 5.0]);
        assert!(tape.maxpool1d(x, 5, 1).is_err());

        let mut len = 1500;
        let mut lens = vec![];
        for _ in 0..5 {
            len = (len - 2) / 2 + 1;
            lens.push(len);
        }
        assert_eq!(lens, vec![750, 375, 187, 93, 46]);
    }

    #[test]
    fn maxpool_tie_routes_to_first() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(t64(&[1, 1, 4], &[2.0, 2.0, 1.0, 1.0]));
        let y = tape.maxpool1d(x, 2, 2).unwrap();
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn linear_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(t64(&[1, 2], &[1.0, 2.0]));
        let w = tape.constant(t64(&[2, 2], &[1.0, 1.0, 1.0, -1.0]));
        let b = tape.constant(t64(&[2], &[0.0, 0.0]));
        let y = tape.linear(x, w, Some(b)).unwrap();
        assert_eq!(tape.value(y).data(), &[3.0, -1.0]);
        let bad = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.linear(x, bad, None).unwrap_err().to_string();
        assert!(err.contains("[1, 2]") && err.contains("[2, 3]"));
    }

    #[test]
    fn linear_mse_closed_form_gradients() {
        // loss = mean((W x + b - t)^2) over 2 outputs, batch 1
        let (x, w, b, t) = ([1.0, 2.0], [0.5, -1.0, 2.0, 0.25], [0.1, -0.2], [1.0, 0.0]);
        let mut tape = Tape::<f64>::new();
        let xv = tape.param(t64(&[1, 2], &x));
        let wv = tape.param(t64(&[2, 2], &w));
        let bv = tape.param(t64(&[2], &b));
        let tv = tape.constant(t64(&[1, 2], &t));
        let y = tape.linear(xv, wv, Some(bv)).unwrap();
        let l = tape.mse_loss(y, tv).unwrap();
        tape.backward(l).unwrap();
        // by hand: y = [0.5 - 2 + 0.1, 2 + 0.5 - 0.2] = [-1.4, 2.3], r = y - t = [-2.4, 2.3]
        let r = [-2.4, 2.3];
        let gy = [r[0], r[1]]; // 2 r / 2
        let gw = [gy[0] * x[0], gy[0] * x[1], gy[1] * x[0], gy[1] * x[1]];
        let gx = [gy[0] * w[0] + gy[1] * w[2], gy[0] * w[1] + gy[1] * w[3]];
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(p, q)| (p - q).abs() < 1e-12);
        assert!(close(tape.grad(bv).unwrap(), &gy));
        assert!(close(tape.grad(wv).unwrap(), &gw));
        assert!(close(tape.grad(xv).unwrap(), &gx));
        assert!((tape.value(l).data()[0] - (2.4f64 * 2.4 + 2.3 * 2.3) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_cases() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::full(&[2, 13], 0.7));
        let y = tape.softmax(x).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| (v - 1.0 / 13.0).abs() < 1e-15));
        let x = tape.constant(t64(&[1, 2], &[0.0, 3f64.ln()]));
        let y = tape.softmax(x).unwrap();
        let v = tape.value(y).data();
        assert!((v[0] - 0.25).abs() < 1e-15 && (v[1] - 0.75).abs() < 1e-15);
        let x1 = tape.constant(t64(&[1, 3], &[0.3, -2.0, 1.7]));
        let x2 = tape.constant(t64(&[1, 3], &[100.3, 98.0, 101.7]));
        let (y1, y2) = (tape.softmax(x1).unwrap(), tape.softmax(x2).unwrap());
        for (a, b) in tape.value(y1).data().iter().zip(tape.value(y2).data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn mse_cases() {
        let mut tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::full(&[1, 13], 1.0 / 13.0));
        let mut onehot = vec![0.0; 13];
        onehot[4] = 1.0;
        let t = tape.constant(t64(&[1, 13], &onehot));
        let l = tape.mse_loss(p, t).unwrap();
        let expected = ((12.0f64 / 13.0).powi(2) + 12.0 * (1.0f64 / 13.0).powi(2)) / 13.0;
        assert!((tape.value(l).data()[0] - expected).abs() < 1e-15);
        assert!((expected - 0.07101).abs() < 1e-5);
        let l0 = tape.mse_loss(t, t).unwrap();
        assert_eq!(tape.value(l0).data()[0], 0.0);

        let mut doubled = Vec::new();
        for _ in 0..2 {
            doubled.extend(std::iter::repeat(1.0 / 13.0).take(13));
        }
        let p2 = tape.constant(t64(&[2, 13], &doubled));
        let mut t2 = onehot.clone();
        t2.extend(&onehot);
        let t2 = tape.constant(t64(&[2, 13], &t2));
        let l2 = tape.mse_loss(p2, t2).unwrap();
        assert!((tape.value(l2).data()[0] - expected).abs() < 1e-15);

        let bad = tape.constant(Tensor::zeros(&[1, 12]));
        assert!(tape.mse_loss(p, bad).is_err());
    }
}
