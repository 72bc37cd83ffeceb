//! Dense layers (linear -> ReLU -> normalization) over row-major activation matrices, with
//! hand-written reverse passes.
//!
//! Rows are grouped into consecutive segments of `seg_len` rows (one segment per
//! neighborhood for set-features, one row per segment for point-features). Batch
//! normalization pools statistics over all rows; group normalization pools them per segment
//! and channel group.

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};

use super::params::NormMode;

pub(crate) const NORM_EPS: f64 = 1e-5;
pub(crate) const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// batch statistics, running statistics left for the caller to update
    Train,
    /// running statistics (batch mode); group and none modes are unaffected
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct NormSlot {
    pub gamma: usize,
    pub beta: usize,
    pub run_mean: usize,
    pub run_var: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Dense {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: usize,
    pub bias: usize,
    pub activation: bool,
    pub norm: Option<NormSlot>,
}

/// Sequence of dense layers; every layer but possibly the last is linear -> ReLU -> norm.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
    pub mode: NormMode,
}

impl Mlp {
    pub fn fan_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.fan_out)
    }
}

/// Allocates parameter offsets in declaration order.
#[derive(Debug, Default)]
pub(crate) struct LayoutBuilder {
    pub values: usize,
    pub running: usize,
    /// (name, offset, len) of every trainable tensor
    pub tensors: Vec<(String, usize, usize)>,
}

impl LayoutBuilder {
    fn take(&mut self, name: String, len: usize) -> usize {
        let off = self.values;
        self.tensors.push((name, off, len));
        self.values += len;
        off
    }

    /// Builds an MLP of the given widths. With `linear_last`, the final layer has neither
    /// activation nor normalization.
    pub fn mlp(
        &mut self,
        name: &str,
        fan_in: usize,
        widths: &[usize],
        mode: NormMode,
        linear_last: bool,
    ) -> Mlp {
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = fan_in;
        for (i, &w) in widths.iter().enumerate() {
            let plain = linear_last && i + 1 == widths.len();
            let weight = self.take(format!("{name}.{i}.weight"), prev * w);
            let bias = self.take(format!("{name}.{i}.bias"), w);
            let norm = (!plain && mode != NormMode::None).then(|| {
                let gamma = self.take(format!("{name}.{i}.norm_scale"), w);
                let beta = self.take(format!("{name}.{i}.norm_shift"), w);
                let run_mean = self.running;
                let run_var = self.running + w;
                self.running += 2 * w;
                NormSlot {
                    gamma,
                    beta,
                    run_mean,
                    run_var,
                }
            });
            layers.push(Dense {
                fan_in: prev,
                fan_out: w,
                weight,
                bias,
                activation: !plain,
                norm,
            });
            prev = w;
        }
        Mlp { layers, mode }
    }
}

/// Saved forward state of one dense layer.
#[derive(Debug, Clone)]
pub(crate) struct LayerTape {
    input: Array2<f64>,
    /// post-activation, pre-normalization values
    act: Array2<f64>,
    /// per normalization set: mean and inverse standard deviation
    mean: Vec<f64>,
    inv_std: Vec<f64>,
    /// biased batch variance per channel (batch mode, training phase)
    var: Vec<f64>,
    train_stats: bool,
}

#[derive(Debug, Clone)]
pub(crate) struct MlpTape {
    pub layers: Vec<LayerTape>,
    pub seg_len: usize,
    /// smallest max/runner-up gap of the maxpool that follows, if any
    pub pool_margin: f64,
}

impl MlpTape {
    pub fn with_pool_margin(mut self, margin: f64) -> Self {
        self.pool_margin = margin;
        self
    }

    /// Smallest |pre-activation| over ReLU units, used to stay away from kinks in
    /// finite-difference checks.
    pub fn relu_margin(&self, mlp: &Mlp, values: &[f64]) -> f64 {
        let mut margin = f64::INFINITY;
        for (layer, tape) in mlp.layers.iter().zip(&self.layers) {
            if !layer.activation {
                continue;
            }
            let z = linear(&tape.input, layer, values);
            margin = z.iter().fold(margin, |m, v| m.min(v.abs()));
        }
        margin
    }
}

fn weight_view<'a>(layer: &Dense, values: &'a [f64]) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape(
        (layer.fan_in, layer.fan_out),
        &values[layer.weight..layer.weight + layer.fan_in * layer.fan_out],
    )
    .expect("weight layout")
}

fn linear(x: &Array2<f64>, layer: &Dense, values: &[f64]) -> Array2<f64> {
    let mut z = x.dot(&weight_view(layer, values));
    let b = &values[layer.bias..layer.bias + layer.fan_out];
    for mut row in z.rows_mut() {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    z
}

/// Normalization sets as (row range, channel range) for a given mode.
fn norm_sets(
    mode: NormMode,
    rows: usize,
    channels: usize,
    seg_len: usize,
) -> Vec<(usize, usize, usize, usize)> {
    match mode {
        NormMode::None => Vec::new(),
        NormMode::Batch => (0..channels).map(|c| (0, rows, c, c + 1)).collect(),
        NormMode::Group(g) => {
            let per = channels / g;
            let segs = rows / seg_len;
            let mut out = Vec::with_capacity(segs * g);
            for s in 0..segs {
                for gi in 0..g {
                    out.push((s * seg_len, (s + 1) * seg_len, gi * per, (gi + 1) * per));
                }
            }
            out
        }
    }
}

pub(crate) fn mlp_forward(
    mlp: &Mlp,
    values: &[f64],
    running: &[f64],
    input: Array2<f64>,
    seg_len: usize,
    phase: Phase,
) -> (Array2<f64>, MlpTape) {
    let mut x = input;
    let mut tapes = Vec::with_capacity(mlp.layers.len());
    for layer in &mlp.layers {
        let mut act = linear(&x, layer, values);
        if layer.activation {
            act.mapv_inplace(|v| v.max(0.0));
        }
        let (rows, ch) = act.dim();
        let mut tape = LayerTape {
            input: x,
            act,
            mean: Vec::new(),
            inv_std: Vec::new(),
            var: Vec::new(),
            train_stats: false,
        };
        let out = match &layer.norm {
            None => tape.act.clone(),
            Some(slot) => {
                let gamma = &values[slot.gamma..slot.gamma + ch];
                let beta = &values[slot.beta..slot.beta + ch];
                let mut y = Array2::zeros((rows, ch));
                if mlp.mode == NormMode::Batch && phase == Phase::Eval {
                    for c in 0..ch {
                        let m = running[slot.run_mean + c];
                        let inv = 1.0 / (running[slot.run_var + c] + NORM_EPS).sqrt();
                        tape.mean.push(m);
                        tape.inv_std.push(inv);
                    }
                    for ((r, c), v) in y.indexed_iter_mut() {
                        *v = gamma[c] * (tape.act[[r, c]] - tape.mean[c]) * tape.inv_std[c]
                            + beta[c];
                    }
                } else if mlp.mode == NormMode::Batch {
                    // per-channel statistics over all rows, accumulated row by row
                    tape.train_stats = true;
                    let n = rows as f64;
                    let mean = tape.act.sum_axis(Axis(0)) / n;
                    let mut var = vec![0.0; ch];
                    for row in tape.act.rows() {
                        for ((acc, v), m) in var.iter_mut().zip(row).zip(&mean) {
                            *acc += (v - m) * (v - m);
                        }
                    }
                    for (c, v) in var.iter().enumerate() {
                        let v = v / n;
                        tape.mean.push(mean[c]);
                        tape.inv_std.push(1.0 / (v + NORM_EPS).sqrt());
                        tape.var.push(v);
                    }
                    for (mut yr, ar) in y.rows_mut().into_iter().zip(tape.act.rows()) {
                        for c in 0..ch {
                            yr[c] = gamma[c] * (ar[c] - tape.mean[c]) * tape.inv_std[c] + beta[c];
                        }
                    }
                } else {
                    for (r0, r1, c0, c1) in norm_sets(mlp.mode, rows, ch, seg_len) {
                        let block = tape.act.slice(s![r0..r1, c0..c1]);
                        let n = block.len() as f64;
                        let mean = block.sum() / n;
                        let var = block.fold(0.0, |acc, v| acc + (v - mean) * (v - mean)) / n;
                        let inv = 1.0 / (var + NORM_EPS).sqrt();
                        for r in r0..r1 {
                            for c in c0..c1 {
                                y[[r, c]] = gamma[c] * (tape.act[[r, c]] - mean) * inv + beta[c];
                            }
                        }
                        tape.mean.push(mean);
                        tape.inv_std.push(inv);
                        tape.var.push(var);
                    }
                }
                y
            }
        };
        tapes.push(tape);
        x = out;
    }
    (
        x,
        MlpTape {
            layers: tapes,
            seg_len,
            pool_margin: f64::INFINITY,
        },
    )
}

/// Reverse pass; accumulates parameter gradients into `grads` and returns the gradient with
/// respect to the MLP input unless `need_input_grad` is false.
pub(crate) fn mlp_backward(
    mlp: &Mlp,
    values: &[f64],
    tape: &MlpTape,
    upstream: Array2<f64>,
    grads: &mut [f64],
    need_input_grad: bool,
) -> Option<Array2<f64>> {
    let mut dy = upstream;
    for (li, (layer, lt)) in mlp.layers.iter().zip(&tape.layers).enumerate().rev() {
        let (rows, ch) = lt.act.dim();
        let mut da = match &layer.norm {
            None => dy,
            Some(slot) => {
                let gamma = values[slot.gamma..slot.gamma + ch].to_vec();
                let mut da = Array2::zeros((rows, ch));
                if mlp.mode == NormMode::Batch {
                    batch_norm_backward(lt, &gamma, &dy, &mut da, grads, slot);
                    da
                } else {
                    let sets = if lt.train_stats || mlp.mode != NormMode::Batch {
                        norm_sets(mlp.mode, rows, ch, tape.seg_len)
                    } else {
                        // frozen statistics: one set per channel, affine in the input
                        (0..ch).map(|c| (0, rows, c, c + 1)).collect()
                    };
                    let frozen = mlp.mode == NormMode::Batch && !lt.train_stats;
                    let (dgamma_off, dbeta_off) = (slot.gamma, slot.beta);
                    for (si, &(r0, r1, c0, c1)) in sets.iter().enumerate() {
                        let (mean, inv) = (lt.mean[si], lt.inv_std[si]);
                        let n = ((r1 - r0) * (c1 - c0)) as f64;
                        let mut sum_dx = 0.0;
                        let mut sum_dx_xhat = 0.0;
                        for r in r0..r1 {
                            for c in c0..c1 {
                                let xhat = (lt.act[[r, c]] - mean) * inv;
                                let g = dy[[r, c]];
                                grads[dgamma_off + c] += g * xhat;
                                grads[dbeta_off + c] += g;
                                let dxhat = g * gamma[c];
                                da[[r, c]] = dxhat;
                                sum_dx += dxhat;
                                sum_dx_xhat += dxhat * xhat;
                            }
                        }
                        for r in r0..r1 {
                            for c in c0..c1 {
                                if frozen {
                                    da[[r, c]] *= inv;
                                } else {
                                    let xhat = (lt.act[[r, c]] - mean) * inv;
                                    da[[r, c]] =
                                        inv / n * (n * da[[r, c]] - sum_dx - xhat * sum_dx_xhat);
                                }
                            }
                        }
                    }
                    da
                }
            }
        };
        if layer.activation {
            da.zip_mut_with(&lt.act, |g, &a| {
                if a <= 0.0 {
                    *g = 0.0;
                }
            });
        }
        let dz = da;
        {
            let dw = lt.input.t().dot(&dz);
            let mut gw = ArrayViewMut2::from_shape(
                (layer.fan_in, layer.fan_out),
                &mut grads[layer.weight..layer.weight + layer.fan_in * layer.fan_out],
            )
            .expect("weight layout");
            gw += &dw;
            let db = dz.sum_axis(Axis(0));
            for (g, v) in grads[layer.bias..layer.bias + layer.fan_out]
                .iter_mut()
                .zip(db.iter())
            {
                *g += v;
            }
        }
        if li == 0 && !need_input_grad {
            return None;
        }
        dy = dz.dot(&weight_view(layer, values).t());
    }
    Some(dy)
}

/// Per-channel normalization backward, row-major. Frozen statistics make it affine.
fn batch_norm_backward(
    lt: &LayerTape,
    gamma: &[f64],
    dy: &Array2<f64>,
    da: &mut Array2<f64>,
    grads: &mut [f64],
    slot: &NormSlot,
) {
    let (rows, ch) = lt.act.dim();
    let n = rows as f64;
    let mut sum_dx = vec![0.0; ch];
    let mut sum_dx_xhat = vec![0.0; ch];
    let mut dgamma = vec![0.0; ch];
    let mut dbeta = vec![0.0; ch];
    for ((ar, gr), mut dr) in lt.act.rows().into_iter().zip(dy.rows()).zip(da.rows_mut()) {
        for c in 0..ch {
            let xhat = (ar[c] - lt.mean[c]) * lt.inv_std[c];
            let g = gr[c];
            dgamma[c] += g * xhat;
            dbeta[c] += g;
            let dxhat = g * gamma[c];
            dr[c] = dxhat;
            sum_dx[c] += dxhat;
            sum_dx_xhat[c] += dxhat * xhat;
        }
    }
    for c in 0..ch {
        grads[slot.gamma + c] += dgamma[c];
        grads[slot.beta + c] += dbeta[c];
    }
    for (ar, mut dr) in lt.act.rows().into_iter().zip(da.rows_mut()) {
        for c in 0..ch {
            let inv = lt.inv_std[c];
            if lt.train_stats {
                let xhat = (ar[c] - lt.mean[c]) * inv;
                dr[c] = inv / n * (n * dr[c] - sum_dx[c] - xhat * sum_dx_xhat[c]);
            } else {
                dr[c] *= inv;
            }
        }
    }
}

/// Folds the batch statistics of a training-phase tape into the running statistics.
pub(crate) fn update_running(mlp: &Mlp, tape: &MlpTape, running: &mut [f64]) {
    if mlp.mode != NormMode::Batch {
        return;
    }
    for (layer, lt) in mlp.layers.iter().zip(&tape.layers) {
        let (Some(slot), true) = (&layer.norm, lt.train_stats) else {
            continue;
        };
        let n = lt.act.nrows() as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..layer.fan_out {
            let rm = &mut running[slot.run_mean + c];
            *rm = (1.0 - BN_MOMENTUM) * *rm + BN_MOMENTUM * lt.mean[c];
            let rv = &mut running[slot.run_var + c];
            *rv = (1.0 - BN_MOMENTUM) * *rv + BN_MOMENTUM * lt.var[c] * unbias;
        }
    }
}

/// Max over each segment of `seg_len` rows; returns the pooled rows and argmax row indices.
pub(crate) fn maxpool(x: &Array2<f64>, seg_len: usize) -> (Array2<f64>, Vec<usize>) {
    let (rows, ch) = x.dim();
    let segs = rows / seg_len;
    let mut out = Array2::from_elem((segs, ch), f64::NEG_INFINITY);
    let mut arg = vec![0usize; segs * ch];
    for s in 0..segs {
        for r in s * seg_len..(s + 1) * seg_len {
            for c in 0..ch {
                let v = x[[r, c]];
                if v > out[[s, c]] {
                    out[[s, c]] = v;
                    arg[s * ch + c] = r;
                }
            }
        }
    }
    (out, arg)
}

/// Smallest positive gap between the maximum and runner-up of every pooled column. Exact
/// ties come from rows clamped by the same ReLU, which move together, and are skipped.
pub(crate) fn maxpool_margin(x: &Array2<f64>, seg_len: usize) -> f64 {
    let (rows, ch) = x.dim();
    let mut margin = f64::INFINITY;
    if seg_len < 2 {
        return margin;
    }
    for s in 0..rows / seg_len {
        for c in 0..ch {
            let (mut top, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
            for r in s * seg_len..(s + 1) * seg_len {
                let v = x[[r, c]];
                if v > top {
                    second = top;
                    top = v;
                } else if v > second {
                    second = v;
                }
            }
            let gap = top - second;
            if gap > 0.0 {
                margin = margin.min(gap);
            }
        }
    }
    margin
}

pub(crate) fn maxpool_backward(d_out: &Array2<f64>, arg: &[usize], rows: usize) -> Array2<f64> {
    let (segs, ch) = d_out.dim();
    let mut dx = Array2::zeros((rows, ch));
    for s in 0..segs {
        for c in 0..ch {
            dx[[arg[s * ch + c], c]] += d_out[[s, c]];
        }
    }
    dx
}
