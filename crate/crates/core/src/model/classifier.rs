use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arch::{Architecture, Layout};
use super::layers::{conv_backward, conv_forward, dot, maxpool_forward, pointwise_forward};
use super::Prediction;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::signal::Window;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Batch norm normalizes with batch statistics.
    Train,
    /// Batch norm normalizes with running statistics; forward is a pure function.
    Eval,
}

/// Per-block batch-norm statistics observed in a training batch
/// (`None` for blocks without batch norm). Variances are unbiased.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub blocks: Vec<Option<(Vec<T>, Vec<T>)>>,
}

/// Output of [`Classifier::backward`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    /// Mean cross-entropy over the batch.
    pub loss: T,
    /// d(loss)/d(param), laid out like [`Classifier::params`].
    pub grads: Vec<T>,
    pub stats: BatchStats<T>,
}

/// A 1-D fully convolutional two-class network with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<T: Scalar = f32> {
    arch: Architecture,
    layout: Layout,
    params: Vec<T>,
    running: Vec<T>,
    mode: Mode,
}

struct BlockCache<T> {
    input: Vec<T>,
    xhat: Vec<T>,
    inv_std: Vec<T>,
    pre_relu: Vec<T>,
    pool_idx: Vec<u32>,
}

struct HeadCache<T> {
    input: Vec<T>,
    hidden: Vec<T>,
    pooled: Vec<T>,
}

struct Pass<T> {
    logits: Vec<[T; 2]>,
    blocks: Vec<BlockCache<T>>,
    head: Option<HeadCache<T>>,
    stats: BatchStats<T>,
}

impl<T: Scalar> Classifier<T> {
    /// Random initialization: weights and biases uniform in `±sqrt(1/fan_in)`,
    /// batch-norm scale 1 and shift 0.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut c = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |params: &mut [T], range: std::ops::Range<usize>, fan_in: usize| {
            let bound = (1.0 / fan_in as f64).sqrt();
            for p in &mut params[range] {
                *p = T::lit(rng.gen_range(-bound..bound));
            }
        };
        let mut cin = c.arch.in_channels;
        for (b, bl) in c.arch.blocks.iter().zip(&c.layout.blocks) {
            fill(&mut c.params, bl.conv_w.clone(), cin * b.kernel);
            fill(&mut c.params, bl.conv_b.clone(), cin * b.kernel);
            if let Some(g) = &bl.bn_gamma {
                c.params[g.clone()].fill(T::one());
            }
            cin = b.out_channels;
        }
        let h = c.arch.head_hidden;
        fill(&mut c.params, c.layout.head_w1.clone(), cin);
        fill(&mut c.params, c.layout.head_b1.clone(), cin);
        fill(&mut c.params, c.layout.head_w2.clone(), h);
        fill(&mut c.params, c.layout.head_b2.clone(), h);
        Ok(c)
    }

    /// Every parameter zero; running means 0 and variances 1.
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut running = vec![T::zero(); layout.n_running];
        for bl in &layout.blocks {
            if let Some(v) = &bl.running_var {
                running[v.clone()].fill(T::one());
            }
        }
        Ok(Self { params: vec![T::zero(); layout.n_params], running, layout, arch, mode: Mode::Eval })
    }

    pub fn from_parts(arch: Architecture, params: Vec<T>, running: Vec<T>) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        if params.len() != layout.n_params || running.len() != layout.n_running {
            return Err(Error::input(format!(
                "expected {} parameters and {} running statistics, got {} and {}",
                layout.n_params,
                layout.n_running,
                params.len(),
                running.len()
            )));
        }
        if params.iter().chain(&running).any(|p| !p.is_finite()) {
            return Err(Error::input("parameters must be finite"));
        }
        Ok(Self { arch, layout, params, running, mode: Mode::Eval })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn running(&self) -> &[T] {
        &self.running
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Overwrites the final bias, e.g. to build a constant predictor.
    pub fn set_output_bias(&mut self, bias: [T; 2]) {
        let r = self.layout.head_b2.clone();
        self.params[r].copy_from_slice(&bias);
    }

    /// Replaces parameters and running statistics with another model's (same architecture).
    pub fn copy_state_from(&mut self, other: &Classifier<T>) {
        debug_assert_eq!(self.arch, other.arch);
        self.params.copy_from_slice(&other.params);
        self.running.copy_from_slice(&other.running);
    }

    /// Converts to another precision.
    pub fn cast<U: Scalar>(&self) -> Classifier<U> {
        Classifier {
            arch: self.arch.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
            running: self.running.iter().map(|p| U::lit(p.as_f64())).collect(),
            mode: self.mode,
        }
    }

    fn input_of(&self, windows: &[&Window]) -> Result<Vec<T>> {
        let n = self.arch.in_channels * self.arch.input_len;
        let mut out = Vec::with_capacity(n * windows.len());
        for w in windows {
            if w.channels != self.arch.in_channels || w.data.len() != n {
                return Err(Error::input(format!(
                    "window {} has {} channels x {} samples; the model expects {} x {}",
                    w.index,
                    w.channels,
                    w.samples(),
                    self.arch.in_channels,
                    self.arch.input_len
                )));
            }
            out.extend(w.data.iter().map(|&x| T::of_f32(x)));
        }
        Ok(out)
    }

    /// Logits for one window; batch norm follows the current mode.
    pub fn forward(&self, window: &Window) -> Result<[T; 2]> {
        Ok(self.forward_batch(&[window])?[0])
    }

    /// Logits for several windows. In train mode batch statistics span the whole batch.
    pub fn forward_batch(&self, windows: &[&Window]) -> Result<Vec<[T; 2]>> {
        if windows.is_empty() {
            return Ok(Vec::new());
        }
        let x = self.input_of(windows)?;
        Ok(self.run(x, windows.len(), self.mode == Mode::Train, false).logits)
    }

    /// Forward, softmax, entropy, and argmax. Requires eval mode.
    pub fn predict(&self, window: &Window) -> Result<Prediction> {
        self.require_eval()?;
        let l = self.forward(window)?;
        Ok(Prediction::from_logits([l[0].as_f64(), l[1].as_f64()]))
    }

    pub fn predict_batch(&self, windows: &[&Window]) -> Result<Vec<Prediction>> {
        self.require_eval()?;
        Ok(self
            .forward_batch(windows)?
            .into_iter()
            .map(|l| Prediction::from_logits([l[0].as_f64(), l[1].as_f64()]))
            .collect())
    }

    fn require_eval(&self) -> Result<()> {
        if self.mode != Mode::Eval {
            return Err(Error::input("prediction requires eval mode"));
        }
        Ok(())
    }

    /// Mean cross-entropy of a labeled batch under the current mode, without side effects.
    pub fn loss(&self, batch: &[(&Window, u8)]) -> Result<T> {
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let windows: Vec<&Window> = batch.iter().map(|(w, _)| *w).collect();
        let x = self.input_of(&windows)?;
        let pass = self.run(x, batch.len(), self.mode == Mode::Train, false);
        let (loss, _) = cross_entropy(&pass.logits, batch);
        Ok(loss)
    }

    /// Gradient of the mean cross-entropy with respect to every parameter. Requires train mode.
    ///
    /// Running statistics are not touched; pass the returned stats to
    /// [`Classifier::absorb_stats`] to update them.
    pub fn backward(&self, batch: &[(&Window, u8)]) -> Result<Gradients<T>> {
        if self.mode != Mode::Train {
            return Err(Error::input("backward requires train mode"));
        }
        if batch.is_empty() {
            return Err(Error::input("empty batch"));
        }
        let windows: Vec<&Window> = batch.iter().map(|(w, _)| *w).collect();
        let x = self.input_of(&windows)?;
        let bsz = batch.len();
        let pass = self.run(x, bsz, true, true);
        let (loss, dlogits) = cross_entropy(&pass.logits, batch);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch: 0, loss: loss.as_f64() });
        }

        let mut grads = vec![T::zero(); self.params.len()];
        let head = pass.head.as_ref().expect("cache kept");
        let cin = self.arch.final_channels();
        let len = self.arch.final_len();
        let h = self.arch.head_hidden;
        let w1 = &self.params[self.layout.head_w1.clone()];
        let w2 = &self.params[self.layout.head_w2.clone()];

        let mut dx = vec![T::zero(); bsz * cin * len];
        {
            let (lo_w1, lo_b1) = (self.layout.head_w1.start, self.layout.head_b1.start);
            let (lo_w2, lo_b2) = (self.layout.head_w2.start, self.layout.head_b2.start);
            let inv_len = T::one() / T::lit(len as f64);
            let mut dh = vec![T::zero(); h * len];
            for (b, dl) in dlogits.iter().enumerate() {
                let g = &head.pooled[b * h..(b + 1) * h];
                for o in 0..2 {
                    grads[lo_b2 + o] += dl[o];
                    for j in 0..h {
                        grads[lo_w2 + o * h + j] += dl[o] * g[j];
                    }
                }
                let hid = &head.hidden[b * h * len..(b + 1) * h * len];
                for j in 0..h {
                    let dg = (w2[j] * dl[0] + w2[h + j] * dl[1]) * inv_len;
                    for t in 0..len {
                        let pass_through = !self.arch.head_relu || hid[j * len + t] > T::zero();
                        dh[j * len + t] = if pass_through { dg } else { T::zero() };
                    }
                }
                let xb = &head.input[b * cin * len..(b + 1) * cin * len];
                let dxb = &mut dx[b * cin * len..(b + 1) * cin * len];
                for j in 0..h {
                    let dhj = &dh[j * len..(j + 1) * len];
                    grads[lo_b1 + j] += dhj.iter().copied().sum::<T>();
                    for c in 0..cin {
                        let xc = &xb[c * len..(c + 1) * len];
                        grads[lo_w1 + j * cin + c] += dot(dhj, xc);
                        let wv = w1[j * cin + c];
                        for (dv, &d) in dxb[c * len..(c + 1) * len].iter_mut().zip(dhj) {
                            *dv += wv * d;
                        }
                    }
                }
            }
        }

        let lengths = self.arch.lengths();
        let mut dout = dx;
        for bi in (0..self.arch.blocks.len()).rev() {
            let block = &self.arch.blocks[bi];
            let bl = &self.layout.blocks[bi];
            let cache = &pass.blocks[bi];
            let (lin, lc, lp) = lengths[bi];
            let co = block.out_channels;
            let ci = if bi == 0 { self.arch.in_channels } else { self.arch.blocks[bi - 1].out_channels };

            // unpool
            let mut dz = if block.pool > 1 {
                let mut d = vec![T::zero(); bsz * co * lc];
                for b in 0..bsz {
                    let idx = &cache.pool_idx[b * co * lp..(b + 1) * co * lp];
                    let src = &dout[b * co * lp..(b + 1) * co * lp];
                    let dst = &mut d[b * co * lc..(b + 1) * co * lc];
                    for (&i, &g) in idx.iter().zip(src) {
                        dst[i as usize] += g;
                    }
                }
                d
            } else {
                dout
            };
            if block.relu {
                for (d, &z) in dz.iter_mut().zip(&cache.pre_relu) {
                    if z <= T::zero() {
                        *d = T::zero();
                    }
                }
            }
            let dy = if let (Some(gr), Some(br)) = (&bl.bn_gamma, &bl.bn_beta) {
                let n = T::lit((bsz * lc) as f64);
                let mut dy = vec![T::zero(); dz.len()];
                for c in 0..co {
                    let gamma = self.params[gr.start + c];
                    let (mut s_dz, mut s_dzx) = (T::zero(), T::zero());
                    for b in 0..bsz {
                        let o = (b * co + c) * lc;
                        s_dz += dz[o..o + lc].iter().copied().sum::<T>();
                        s_dzx += dot(&dz[o..o + lc], &cache.xhat[o..o + lc]);
                    }
                    grads[gr.start + c] += s_dzx;
                    grads[br.start + c] += s_dz;
                    // with dxhat = gamma * dz the sums scale by gamma
                    let k = gamma * cache.inv_std[c] / n;
                    for b in 0..bsz {
                        let o = (b * co + c) * lc;
                        for t in 0..lc {
                            dy[o + t] = k * (n * dz[o + t] - s_dz - cache.xhat[o + t] * s_dzx);
                        }
                    }
                }
                dy
            } else {
                dz
            };

            let (w_lo, w_hi) = (bl.conv_w.start, bl.conv_w.end);
            let (b_lo, b_hi) = (bl.conv_b.start, bl.conv_b.end);
            let w = &self.params[w_lo..w_hi];
            let mut dw = vec![T::zero(); w_hi - w_lo];
            let mut db = vec![T::zero(); b_hi - b_lo];
            let need_dx = bi > 0;
            let mut dx = if need_dx { vec![T::zero(); bsz * ci * lin] } else { Vec::new() };
            for b in 0..bsz {
                let xb = &cache.input[b * ci * lin..(b + 1) * ci * lin];
                let dyb = &dy[b * co * lc..(b + 1) * co * lc];
                let dxb = if need_dx { Some(&mut dx[b * ci * lin..(b + 1) * ci * lin]) } else { None };
                conv_backward(xb, ci, lin, w, block.kernel, block.stride, dyb, lc, &mut dw, &mut db, dxb);
            }
            for (g, d) in grads[w_lo..w_hi].iter_mut().zip(dw) {
                *g += d;
            }
            for (g, d) in grads[b_lo..b_hi].iter_mut().zip(db) {
                *g += d;
            }
            dout = dx;
        }

        Ok(Gradients { loss, grads, stats: pass.stats })
    }

    /// Which ReLUs are active and which max-pool inputs win, for a batch under
    /// the current mode. The loss is smooth in the parameters wherever this
    /// pattern stays fixed, which is what finite-difference checks need to know.
    pub fn activation_pattern(&self, windows: &[&Window]) -> Result<Vec<u32>> {
        let x = self.input_of(windows)?;
        let pass = self.run(x, windows.len(), self.mode == Mode::Train, true);
        let mut out = Vec::new();
        for b in &pass.blocks {
            out.extend(b.pre_relu.iter().map(|&v| u32::from(v > T::zero())));
            out.extend_from_slice(&b.pool_idx);
        }
        if self.arch.head_relu {
            let head = pass.head.expect("cache kept");
            out.extend(head.hidden.iter().map(|&v| u32::from(v > T::zero())));
        }
        Ok(out)
    }

    /// Folds batch statistics into the running estimates (momentum 0.1).
    pub fn absorb_stats(&mut self, stats: &BatchStats<T>) {
        let m = T::lit(BN_MOMENTUM);
        for (bl, s) in self.layout.blocks.iter().zip(&stats.blocks) {
            if let (Some(mr), Some(vr), Some((mean, var))) = (&bl.running_mean, &bl.running_var, s) {
                for (r, &v) in self.running[mr.clone()].iter_mut().zip(mean) {
                    *r = (T::one() - m) * *r + m * v;
                }
                for (r, &v) in self.running[vr.clone()].iter_mut().zip(var) {
                    *r = (T::one() - m) * *r + m * v;
                }
            }
        }
    }

    fn run(&self, mut x: Vec<T>, bsz: usize, batch_stats: bool, keep: bool) -> Pass<T> {
        let lengths = self.arch.lengths();
        let eps = T::lit(BN_EPS);
        let mut blocks = Vec::new();
        let mut stats = BatchStats { blocks: Vec::new() };
        let mut cin = self.arch.in_channels;
        for ((block, bl), &(lin, lc, lp)) in self.arch.blocks.iter().zip(&self.layout.blocks).zip(&lengths) {
            let co = block.out_channels;
            let w = &self.params[bl.conv_w.clone()];
            let bias = &self.params[bl.conv_b.clone()];
            let mut y = vec![T::zero(); bsz * co * lc];
            for b in 0..bsz {
                conv_forward(
                    &x[b * cin * lin..(b + 1) * cin * lin],
                    cin,
                    lin,
                    w,
                    bias,
                    block.kernel,
                    block.stride,
                    &mut y[b * co * lc..(b + 1) * co * lc],
                    lc,
                );
            }

            let mut xhat = Vec::new();
            let mut inv_std = Vec::new();
            let mut block_stats = None;
            if let (Some(gr), Some(br)) = (&bl.bn_gamma, &bl.bn_beta) {
                let gamma = &self.params[gr.clone()];
                let beta = &self.params[br.clone()];
                let (mean, var) = if batch_stats {
                    let n = (bsz * lc) as f64;
                    let mut mean = vec![T::zero(); co];
                    let mut var = vec![T::zero(); co];
                    for c in 0..co {
                        let mut s = T::zero();
                        for b in 0..bsz {
                            s += y[(b * co + c) * lc..(b * co + c + 1) * lc].iter().copied().sum::<T>();
                        }
                        let mu = s / T::lit(n);
                        let mut ss = T::zero();
                        for b in 0..bsz {
                            for &v in &y[(b * co + c) * lc..(b * co + c + 1) * lc] {
                                ss += (v - mu) * (v - mu);
                            }
                        }
                        mean[c] = mu;
                        var[c] = ss / T::lit(n);
                    }
                    let unbiased = if n > 1.0 {
                        var.iter().map(|&v| v * T::lit(n / (n - 1.0))).collect()
                    } else {
                        var.clone()
                    };
                    block_stats = Some((mean.clone(), unbiased));
                    (mean, var)
                } else {
                    let mr = bl.running_mean.clone().expect("batch-norm block has running stats");
                    let vr = bl.running_var.clone().expect("batch-norm block has running stats");
                    (self.running[mr].to_vec(), self.running[vr].to_vec())
                };
                inv_std = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                if keep {
                    xhat = vec![T::zero(); y.len()];
                }
                for b in 0..bsz {
                    for c in 0..co {
                        let o = (b * co + c) * lc;
                        let (mu, is, g, be) = (mean[c], inv_std[c], gamma[c], beta[c]);
                        for t in 0..lc {
                            let xh = (y[o + t] - mu) * is;
                            if keep {
                                xhat[o + t] = xh;
                            }
                            y[o + t] = g * xh + be;
                        }
                    }
                }
            }
            stats.blocks.push(block_stats);

            let pre_relu = if keep && block.relu { y.clone() } else { Vec::new() };
            if block.relu {
                for v in &mut y {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            let (out, pool_idx) = if block.pool > 1 {
                let mut out = vec![T::zero(); bsz * co * lp];
                let mut idx = vec![0u32; bsz * co * lp];
                for b in 0..bsz {
                    maxpool_forward(
                        &y[b * co * lc..(b + 1) * co * lc],
                        co,
                        lc,
                        block.pool,
                        &mut out[b * co * lp..(b + 1) * co * lp],
                        &mut idx[b * co * lp..(b + 1) * co * lp],
                    );
                }
                (out, idx)
            } else {
                (y, Vec::new())
            };
            let input = std::mem::replace(&mut x, out);
            if keep {
                blocks.push(BlockCache { input, xhat, inv_std, pre_relu, pool_idx });
            }
            cin = co;
        }

        let len = self.arch.final_len();
        let h = self.arch.head_hidden;
        let w1 = &self.params[self.layout.head_w1.clone()];
        let b1 = &self.params[self.layout.head_b1.clone()];
        let w2 = &self.params[self.layout.head_w2.clone()];
        let b2 = &self.params[self.layout.head_b2.clone()];
        let inv_len = T::one() / T::lit(len as f64);
        let mut hidden = vec![T::zero(); bsz * h * len];
        let mut pooled = vec![T::zero(); bsz * h];
        let mut logits = Vec::with_capacity(bsz);
        for b in 0..bsz {
            let hb = &mut hidden[b * h * len..(b + 1) * h * len];
            pointwise_forward(&x[b * cin * len..(b + 1) * cin * len], cin, len, w1, b1, hb);
            let g = &mut pooled[b * h..(b + 1) * h];
            for j in 0..h {
                let row = &hb[j * len..(j + 1) * len];
                let s: T = if self.arch.head_relu {
                    row.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).sum()
                } else {
                    row.iter().copied().sum()
                };
                g[j] = s * inv_len;
            }
            let mut l = [b2[0], b2[1]];
            for j in 0..h {
                l[0] += w2[j] * g[j];
                l[1] += w2[h + j] * g[j];
            }
            logits.push(l);
        }
        let head = keep.then(|| HeadCache { input: x, hidden, pooled });
        Pass { logits, blocks, head, stats }
    }
}

/// Mean cross-entropy and its gradient with respect to the logits.
fn cross_entropy<T: Scalar>(logits: &[[T; 2]], batch: &[(&Window, u8)]) -> (T, Vec<[T; 2]>) {
    let n = T::lit(batch.len() as f64);
    let mut loss = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (l, (_, y)) in logits.iter().zip(batch) {
        let m = l[0].max(l[1]);
        let e = [(l[0] - m).exp(), (l[1] - m).exp()];
        let s = e[0] + e[1];
        let y = usize::from(*y);
        loss += m + s.ln() - l[y];
        let mut g = [e[0] / s / n, e[1] / s / n];
        g[y] -= T::one() / n;
        grad.push(g);
    }
    (loss / n, grad)
}
