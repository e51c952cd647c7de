//! Batched evaluation of the training objective and its gradient.
//!
//! Each chunk of points is pushed through the network as four stacked
//! streams `(value, ∂x, ∂t, ∂xx)`, so one matrix product per layer carries
//! every derivative the residuals need. The parameter gradient comes from a
//! hand-written reverse sweep over those streams. Data points only need the
//! value stream.
//!
//! The result agrees with the tape objective in [`super::total_loss`] to
//! rounding; the tests check that directly.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};

use super::{LossBreakdown, LossError};
use crate::datagen::{IbPoint, TrainingSet};
use crate::network::{Architecture, LayerLayout, NetworkParams};
use crate::residuals::PhysicsMode;

/// Points per chunk.
pub const DEFAULT_CHUNK: usize = 256;

/// Network forward/reverse kernel with reusable buffers.
#[derive(Debug, Clone)]
pub struct JetKernel {
    arch: Architecture,
    layout: Vec<LayerLayout>,
    scale: f64,
    cap: usize,
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    act: Vec<Array2<f64>>,
    adj: Vec<Array2<f64>>,
    slope_bar: Vec<Vec<f64>>,
}

impl JetKernel {
    pub fn new(arch: &Architecture, scale: f64, cap: usize) -> Self {
        let cap = cap.max(1);
        let layout = arch.layout();
        let rows = 4 * cap;
        let pre = layout.iter().map(|l| Array2::zeros((rows, l.fan_out))).collect();
        let act = layout.iter().map(|l| Array2::zeros((rows, l.fan_out))).collect();
        let adj = layout.iter().map(|l| Array2::zeros((rows, l.fan_out))).collect();
        let slope_bar = layout.iter().map(|l| vec![0.0; l.fan_out]).collect();
        Self {
            arch: arch.clone(),
            layout,
            scale,
            cap,
            input: Array2::zeros((rows, 2)),
            pre,
            act,
            adj,
            slope_bar,
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    /// Loads `n` points with `streams` derivative streams (1 or 4).
    fn load(&mut self, points: impl Iterator<Item = [f64; 2]>, n: usize, streams: usize) {
        let map = self.arch.input_map();
        let inp = self.input.as_slice_mut().expect("standard layout");
        for (i, [x, t]) in points.enumerate() {
            [inp[2 * i], inp[2 * i + 1]] = map.apply(x, t);
        }
        if streams == 4 {
            let [gx, gt] = map.gain;
            for i in 0..n {
                let seeds = [(n + i, [gx, 0.0]), (2 * n + i, [0.0, gt]), (3 * n + i, [0.0, 0.0])];
                for (row, v) in seeds {
                    inp[2 * row] = v[0];
                    inp[2 * row + 1] = v[1];
                }
            }
        }
    }

    fn weights<'a>(&self, theta: &'a [f64], d: usize) -> ArrayView2<'a, f64> {
        let l = &self.layout[d];
        ArrayView2::from_shape((l.fan_out, l.fan_in), &theta[l.weights.clone()]).unwrap()
    }

    /// Forward sweep; the output block is `pre[last]`.
    fn forward(&mut self, theta: &[f64], n: usize, streams: usize) -> Result<(), LossError> {
        let rows = n * streams;
        let depth = self.layout.len();
        for d in 0..depth {
            let w = self.weights(theta, d);
            let l = &self.layout[d];
            let bias = ArrayView1::from(&theta[l.bias.clone()]);
            let (before, rest) = self.act.split_at_mut(d);
            let x = if d == 0 {
                self.input.slice(s![..rows, ..])
            } else {
                before[d - 1].slice(s![..rows, ..])
            };
            let mut p = self.pre[d].slice_mut(s![..rows, ..]);
            general_mat_mul(1.0, &x, &w.t(), 0.0, &mut p);
            p.slice_mut(s![..n, ..]).axis_iter_mut(Axis(0)).for_each(|mut r| r += &bias);

            let Some(slopes) = l.slopes.clone() else {
                continue;
            };
            let c: Vec<f64> = theta[slopes].iter().map(|a| self.scale * a).collect();
            let width = l.fan_out;
            let p = &self.pre[d].as_slice().unwrap()[..rows * width];
            let h = &mut rest[0].as_slice_mut().unwrap()[..rows * width];
            let (p0, pd) = p.split_at(n * width);
            let (h0, hd) = h.split_at_mut(n * width);
            let mut finite = true;
            for (hr, pr) in h0.chunks_exact_mut(width).zip(p0.chunks_exact(width)) {
                for ((hv, &pv), &cj) in hr.iter_mut().zip(pr).zip(&c) {
                    let s0 = cj * pv;
                    finite &= s0.is_finite();
                    *hv = s0.tanh();
                }
            }
            if streams == 4 {
                let (px, pd) = pd.split_at(n * width);
                let (pt, pxx) = pd.split_at(n * width);
                let (hx, hd) = hd.split_at_mut(n * width);
                let (ht, hxx) = hd.split_at_mut(n * width);
                let rows_in = p0
                    .chunks_exact(width)
                    .zip(px.chunks_exact(width))
                    .zip(pt.chunks_exact(width))
                    .zip(pxx.chunks_exact(width));
                let rows_out = h0
                    .chunks_exact(width)
                    .zip(hx.chunks_exact_mut(width))
                    .zip(ht.chunks_exact_mut(width))
                    .zip(hxx.chunks_exact_mut(width));
                for ((((_, px), pt), pxx), (((hv, hx), ht), hxx)) in rows_in.zip(rows_out) {
                    for j in 0..width {
                        let (cj, hv) = (c[j], hv[j]);
                        let s1 = 1.0 - hv * hv;
                        let s2 = -2.0 * hv * s1;
                        let sx = cj * px[j];
                        hx[j] = s1 * sx;
                        ht[j] = s1 * cj * pt[j];
                        hxx[j] = s2 * sx * sx + s1 * cj * pxx[j];
                    }
                }
            }
            if !finite {
                return Err(LossError::Network(crate::network::NetworkError::NonFinite {
                    layer: d + 1,
                }));
            }
        }
        Ok(())
    }

    /// Reverse sweep from the output adjoint in `adj[last]`, accumulating
    /// into `grad` (network parameters only).
    fn backward(&mut self, theta: &[f64], grad: &mut [f64], n: usize, streams: usize) {
        let rows = n * streams;
        let depth = self.layout.len();
        for d in (0..depth).rev() {
            let l = self.layout[d].clone();
            if let Some(slopes) = l.slopes.clone() {
                let width = l.fan_out;
                let c: Vec<f64> = theta[slopes.clone()].iter().map(|a| self.scale * a).collect();
                let cbar = &mut self.slope_bar[d];
                cbar.iter_mut().for_each(|v| *v = 0.0);
                let m = n * width;
                let p = &self.pre[d].as_slice().unwrap()[..rows * width];
                let h = &self.act[d].as_slice().unwrap()[..m];
                let a = &mut self.adj[d].as_slice_mut().unwrap()[..rows * width];
                if streams == 1 {
                    for ((ar, pr), hr) in a
                        .chunks_exact_mut(width)
                        .zip(p.chunks_exact(width))
                        .zip(h.chunks_exact(width))
                    {
                        for j in 0..width {
                            let sb0 = (1.0 - hr[j] * hr[j]) * ar[j];
                            cbar[j] += pr[j] * sb0;
                            ar[j] = c[j] * sb0;
                        }
                    }
                } else {
                    let (p0, pd) = p.split_at(m);
                    let (px, pd) = pd.split_at(m);
                    let (pt, pxx) = pd.split_at(m);
                    let (a0, ad) = a.split_at_mut(m);
                    let (ax, ad) = ad.split_at_mut(m);
                    let (at, axx) = ad.split_at_mut(m);
                    for r in 0..n {
                        let o = r * width;
                        let (p0, px, pt, pxx) = (
                            &p0[o..o + width],
                            &px[o..o + width],
                            &pt[o..o + width],
                            &pxx[o..o + width],
                        );
                        let hr = &h[o..o + width];
                        let (a0, ax, at, axx) = (
                            &mut a0[o..o + width],
                            &mut ax[o..o + width],
                            &mut at[o..o + width],
                            &mut axx[o..o + width],
                        );
                        for j in 0..width {
                            let (cj, hv) = (c[j], hr[j]);
                            let s1 = 1.0 - hv * hv;
                            let s2 = -2.0 * hv * s1;
                            let (sx, st, sxx) = (cj * px[j], cj * pt[j], cj * pxx[j]);
                            let (hb0, hbx, hbt, hbxx) = (a0[j], ax[j], at[j], axx[j]);
                            let sbxx = s1 * hbxx;
                            let sbx = s1 * hbx + 2.0 * s2 * sx * hbxx;
                            let sbt = s1 * hbt;
                            let sig2b = sx * sx * hbxx;
                            let sig1b = sx * hbx + st * hbt + sxx * hbxx - 2.0 * hv * sig2b;
                            let sb0 = s1 * (hb0 - 2.0 * s1 * sig2b - 2.0 * hv * sig1b);
                            cbar[j] += p0[j] * sb0 + px[j] * sbx + pt[j] * sbt + pxx[j] * sbxx;
                            a0[j] = cj * sb0;
                            ax[j] = cj * sbx;
                            at[j] = cj * sbt;
                            axx[j] = cj * sbxx;
                        }
                    }
                }
                for (g, cb) in grad[slopes].iter_mut().zip(cbar.iter()) {
                    *g += self.scale * cb;
                }
            }

            let pbar = self.adj[d].slice(s![..rows, ..]);
            let x = if d == 0 {
                self.input.slice(s![..rows, ..])
            } else {
                self.act[d - 1].slice(s![..rows, ..])
            };
            let mut wbar =
                ArrayViewMut2::from_shape((l.fan_out, l.fan_in), &mut grad[l.weights.clone()])
                    .unwrap();
            general_mat_mul(1.0, &pbar.t(), &x, 1.0, &mut wbar);
            for (g, col) in grad[l.bias.clone()]
                .iter_mut()
                .zip(pbar.slice(s![..n, ..]).axis_iter(Axis(1)))
            {
                *g += col.sum();
            }
            if d > 0 {
                let w = ArrayView2::from_shape((l.fan_out, l.fan_in), &theta[l.weights.clone()])
                    .unwrap();
                let (lower, upper) = self.adj.split_at_mut(d);
                let pbar = upper[0].slice(s![..rows, ..]);
                let mut hbar = lower[d - 1].slice_mut(s![..rows, ..]);
                general_mat_mul(1.0, &pbar, &w, 0.0, &mut hbar);
            }
        }
    }

    fn output(&self, row: usize) -> [f64; 3] {
        let y = self.pre.last().unwrap();
        [y[[row, 0]], y[[row, 1]], y[[row, 2]]]
    }

    /// Values and `∂x, ∂t, ∂xx` of `(u, v, L)` at each point.
    pub fn jets(&mut self, params: &NetworkParams, points: &[[f64; 2]]) -> Result<Vec<[[f64; 3]; 4]>, LossError> {
        self.check(params)?;
        let theta = params.to_flat();
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(self.cap) {
            let n = chunk.len();
            self.load(chunk.iter().copied(), n, 4);
            self.forward(&theta, n, 4)?;
            out.extend((0..n).map(|i| [0, 1, 2, 3].map(|k| self.output(k * n + i))));
        }
        Ok(out)
    }

    /// Network values at each point.
    pub fn predict(&mut self, params: &NetworkParams, points: &[[f64; 2]]) -> Result<Vec<[f64; 3]>, LossError> {
        self.check(params)?;
        let theta = params.to_flat();
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(4 * self.cap) {
            let n = chunk.len();
            self.load(chunk.iter().copied(), n, 1);
            self.forward(&theta, n, 1)?;
            out.extend((0..n).map(|i| self.output(i)));
        }
        Ok(out)
    }

    fn check(&self, params: &NetworkParams) -> Result<(), LossError> {
        if params.architecture() != &self.arch || params.scale() != self.scale {
            return Err(LossError::ParamLength {
                expected: self.arch.n_params(),
                got: params.architecture().n_params(),
            });
        }
        Ok(())
    }
}

/// Network values at each point, batched.
pub fn predict(params: &NetworkParams, points: &[[f64; 2]]) -> Result<Vec<[f64; 3]>, LossError> {
    JetKernel::new(params.architecture(), params.scale(), DEFAULT_CHUNK).predict(params, points)
}

/// The full objective over a flat vector `θ = (network params, [λ₁, λ₂])`,
/// with the coefficients present only in inverse mode.
#[derive(Debug, Clone)]
pub struct PinnObjective {
    kernel: JetKernel,
    mode: PhysicsMode,
    alpha: f64,
    n_a: f64,
    data: Vec<IbPoint>,
    collocation: Vec<[f64; 2]>,
    slopes: Vec<Range<usize>>,
    weights: Vec<Range<usize>>,
    n_net: usize,
}

impl PinnObjective {
    pub fn new(
        arch: &Architecture,
        scale: f64,
        mode: PhysicsMode,
        ts: &TrainingSet,
        alpha: f64,
        n_a: f64,
    ) -> Result<Self, LossError> {
        if ts.ib_points.is_empty() {
            return Err(LossError::EmptyData);
        }
        if ts.collocation.is_empty() {
            return Err(LossError::EmptyCollocation);
        }
        let layout = arch.layout();
        Ok(Self {
            kernel: JetKernel::new(arch, scale, DEFAULT_CHUNK),
            mode,
            alpha,
            n_a,
            data: ts.ib_points.clone(),
            collocation: ts.collocation.clone(),
            slopes: layout.iter().filter_map(|l| l.slopes.clone()).collect(),
            weights: layout.iter().map(|l| l.weights.clone()).collect(),
            n_net: arch.n_params(),
        })
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.kernel = JetKernel::new(&self.kernel.arch, self.kernel.scale, chunk);
        self
    }

    pub fn dim(&self) -> usize {
        self.n_net + if self.mode.is_trainable() { 2 } else { 0 }
    }

    pub fn mode(&self) -> PhysicsMode {
        self.mode
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Flat starting point from network parameters and the mode's coefficients.
    pub fn pack(&self, params: &NetworkParams) -> Vec<f64> {
        let mut theta = params.to_flat();
        if self.mode.is_trainable() {
            theta.extend(self.mode.lambdas());
        }
        theta
    }

    /// Network parameters and coefficients encoded in `theta`.
    pub fn unpack(&self, theta: &[f64]) -> Result<(NetworkParams, PhysicsMode), LossError> {
        self.unpacker().unpack(theta)
    }

    /// Decoder for flat vectors that does not borrow the objective.
    pub fn unpacker(&self) -> Unpacker {
        Unpacker {
            arch: self.kernel.arch.clone(),
            scale: self.kernel.scale,
            mode: self.mode,
        }
    }

    fn lambdas(&self, theta: &[f64]) -> [f64; 2] {
        if self.mode.is_trainable() {
            [theta[self.n_net], theta[self.n_net + 1]]
        } else {
            self.mode.lambdas()
        }
    }

    fn check_len(&self, got: usize) -> Result<(), LossError> {
        if got != self.dim() {
            return Err(LossError::ParamLength {
                expected: self.dim(),
                got,
            });
        }
        Ok(())
    }

    /// Loss terms only.
    pub fn breakdown(&mut self, theta: &[f64]) -> Result<LossBreakdown, LossError> {
        let mut grad = vec![0.0; theta.len()];
        self.evaluate(theta, &mut grad)
    }

    /// Loss terms, with the gradient of the total written to `grad`.
    pub fn evaluate(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<LossBreakdown, LossError> {
        self.check_len(theta.len())?;
        self.check_len(grad.len())?;
        grad.iter_mut().for_each(|g| *g = 0.0);
        let (loss_s, loss_l) = self.data_terms(theta, grad)?;
        let (loss_fs, loss_fl) = self.residual_terms(theta, grad)?;
        let loss_a = self.slope_term(theta, grad);
        let mut penalty = 0.0;
        for r in &self.weights {
            for (g, &w) in grad[r.clone()].iter_mut().zip(&theta[r.clone()]) {
                penalty += w * w;
                *g += self.alpha * w;
            }
        }
        let b = LossBreakdown::new(
            [loss_s, loss_l, loss_fs, loss_fl, loss_a, 0.5 * penalty],
            self.alpha,
            self.n_a,
        );
        b.check_finite()?;
        Ok(b)
    }

    fn data_terms(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<(f64, f64), LossError> {
        let inv = 1.0 / self.data.len() as f64;
        let (mut sum_s, mut sum_l) = (0.0, 0.0);
        let chunk = 4 * self.kernel.cap;
        for block in self.data.chunks(chunk) {
            let n = block.len();
            self.kernel.load(block.iter().map(|p| [p.x, p.t]), n, 1);
            self.kernel.forward(theta, n, 1)?;
            let last = self.kernel.layout.len() - 1;
            for (i, p) in block.iter().enumerate() {
                let [u, v, l] = self.kernel.output(i);
                let r = [u - p.u, v - p.v, l - p.l];
                sum_s += r[0] * r[0] + r[1] * r[1];
                sum_l += r[2] * r[2];
                for k in 0..3 {
                    self.kernel.adj[last][[i, k]] = 2.0 * r[k] * inv;
                }
            }
            self.kernel.backward(theta, &mut grad[..self.n_net], n, 1);
        }
        Ok((sum_s * inv, sum_l * inv))
    }

    fn residual_terms(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<(f64, f64), LossError> {
        let inv = 1.0 / self.collocation.len() as f64;
        let [l1, l2] = self.lambdas(theta);
        let (mut sum_s, mut sum_l) = (0.0, 0.0);
        let (mut l1_bar, mut l2_bar) = (0.0, 0.0);
        let last = self.kernel.layout.len() - 1;
        let collocation = std::mem::take(&mut self.collocation);
        let result = (|| {
            for block in collocation.chunks(self.kernel.cap) {
                let n = block.len();
                self.kernel.load(block.iter().copied(), n, 4);
                self.kernel.forward(theta, n, 4)?;
                for i in 0..n {
                    let [u, v, l] = self.kernel.output(i);
                    let [u_x, v_x, _] = self.kernel.output(n + i);
                    let [u_t, v_t, l_t] = self.kernel.output(2 * n + i);
                    let [u_xx, v_xx, _] = self.kernel.output(3 * n + i);
                    let flux = 2.0 * (u * u_x + v * v_x);
                    let f_u = -v_t + l1 * u_xx + u * l;
                    let f_v = u_t + l1 * v_xx + v * l;
                    let f_l = l_t - l2 * flux;
                    sum_s += f_u * f_u + f_v * f_v;
                    sum_l += f_l * f_l;
                    let (gu, gv, gl) = (2.0 * f_u * inv, 2.0 * f_v * inv, 2.0 * f_l * inv);
                    l1_bar += gu * u_xx + gv * v_xx;
                    l2_bar -= gl * flux;
                    let y = &mut self.kernel.adj[last];
                    y[[i, 0]] = gu * l - 2.0 * l2 * gl * u_x;
                    y[[i, 1]] = gv * l - 2.0 * l2 * gl * v_x;
                    y[[i, 2]] = gu * u + gv * v;
                    y[[n + i, 0]] = -2.0 * l2 * gl * u;
                    y[[n + i, 1]] = -2.0 * l2 * gl * v;
                    y[[n + i, 2]] = 0.0;
                    y[[2 * n + i, 0]] = gv;
                    y[[2 * n + i, 1]] = -gu;
                    y[[2 * n + i, 2]] = gl;
                    y[[3 * n + i, 0]] = l1 * gu;
                    y[[3 * n + i, 1]] = l1 * gv;
                    y[[3 * n + i, 2]] = 0.0;
                }
                self.kernel.backward(theta, &mut grad[..self.n_net], n, 4);
            }
            Ok::<_, LossError>(())
        })();
        self.collocation = collocation;
        result?;
        if self.mode.is_trainable() {
            grad[self.n_net] += l1_bar;
            grad[self.n_net + 1] += l2_bar;
        }
        Ok((sum_s * inv, sum_l * inv))
    }

    fn slope_term(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let hidden = self.slopes.len() as f64;
        let exps: Vec<f64> = self
            .slopes
            .iter()
            .map(|r| (theta[r.clone()].iter().sum::<f64>() / r.len() as f64).exp())
            .collect();
        let q = self.n_a / hidden * exps.iter().sum::<f64>();
        for (r, e) in self.slopes.iter().zip(&exps) {
            let coef = -(self.n_a / hidden) * e / (q * q * r.len() as f64);
            grad[r.clone()].iter_mut().for_each(|g| *g += coef);
        }
        1.0 / q
    }
}

/// Splits a flat vector into network parameters and coefficients.
#[derive(Debug, Clone)]
pub struct Unpacker {
    arch: Architecture,
    scale: f64,
    mode: PhysicsMode,
}

impl Unpacker {
    pub fn dim(&self) -> usize {
        self.arch.n_params() + if self.mode.is_trainable() { 2 } else { 0 }
    }

    pub fn lambdas(&self, theta: &[f64]) -> [f64; 2] {
        let n = self.arch.n_params();
        if self.mode.is_trainable() {
            [theta[n], theta[n + 1]]
        } else {
            self.mode.lambdas()
        }
    }

    pub fn unpack(&self, theta: &[f64]) -> Result<(NetworkParams, PhysicsMode), LossError> {
        if theta.len() != self.dim() {
            return Err(LossError::ParamLength {
                expected: self.dim(),
                got: theta.len(),
            });
        }
        let n = self.arch.n_params();
        let params = NetworkParams::from_flat(&self.arch, self.scale, &theta[..n])?;
        Ok((params, self.mode.with_lambdas(self.lambdas(theta))))
    }
}
