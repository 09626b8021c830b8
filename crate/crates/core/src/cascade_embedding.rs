//! Micro-scale snapshot encoder: a learnable sinusoidal encoding of the
//! adoption gaps, multi-head self-attention over the snapshot's adopters,
//! and sum pooling into one vector per snapshot.
//!
//! Adopter inputs are `[user embedding ⊕ φ(Δt)]`. The three projections are
//! shared by all heads; head `h` reads the `h`-th contiguous block of
//! `d_model / heads` columns, and the head outputs are concatenated
//! without an output projection.

use crate::error::shape_check;
use crate::linalg::{axpy, dot, vec_mat_acc, vec_mat_backward};
use crate::{Error, Result};

/// Learnable frequencies of the time encoding.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncodingParams {
    pub omegas: Vec<f64>,
}

impl TimeEncodingParams {
    /// Width `1 + 2k` for `k` frequencies.
    pub fn dim(&self) -> usize {
        encoding_dim(self.omegas.len())
    }

    /// `count` frequencies log-spaced over `[1/window, 1/snapshot]`.
    pub fn log_spaced(count: usize, window: f64, snapshot: f64) -> Self {
        Self {
            omegas: log_spaced_frequencies(count, window, snapshot),
        }
    }
}

pub fn encoding_dim(frequencies: usize) -> usize {
    1 + 2 * frequencies
}

pub fn log_spaced_frequencies(count: usize, window: f64, snapshot: f64) -> Vec<f64> {
    let (lo, hi) = ((1.0 / window).ln(), (1.0 / snapshot).ln());
    match count {
        0 => Vec::new(),
        1 => vec![((lo + hi) / 2.0).exp()],
        _ => (0..count)
            .map(|k| (lo + (hi - lo) * k as f64 / (count - 1) as f64).exp())
            .collect(),
    }
}

/// `φ(Δt)`: slot 0 is `Δt`, slots `2k+1` and `2k+2` are `sin(ω_k Δt)` and
/// `cos(ω_k Δt)`.
pub fn time_encode(dt: f64, omegas: &[f64]) -> Result<Vec<f64>> {
    if !(dt >= 0.0) {
        return Err(Error::Argument(format!("time gap must be >= 0, got {dt}")));
    }
    let mut out = vec![0.0; encoding_dim(omegas.len())];
    time_encode_into(dt, omegas, &mut out);
    Ok(out)
}

#[inline]
pub fn time_encode_into(dt: f64, omegas: &[f64], out: &mut [f64]) {
    out[0] = dt;
    for (k, w) in omegas.iter().enumerate() {
        let (s, c) = (w * dt).sin_cos();
        out[2 * k + 1] = s;
        out[2 * k + 2] = c;
    }
}

/// Accumulates `∂L/∂ω` given `∂L/∂φ(Δt)`.
#[inline]
pub fn time_encode_backward(dt: f64, omegas: &[f64], d_enc: &[f64], d_omegas: &mut [f64]) {
    for (k, (w, g)) in omegas.iter().zip(d_omegas.iter_mut()).enumerate() {
        let (s, c) = (w * dt).sin_cos();
        *g += dt * (c * d_enc[2 * k + 1] - s * d_enc[2 * k + 2]);
    }
}

/// Borrowed view of the attention projections, each `(d_in, d_model)`.
#[derive(Debug, Clone, Copy)]
pub struct Attention<'a> {
    pub d_in: usize,
    pub d_model: usize,
    pub heads: usize,
    pub w_q: &'a [f64],
    pub w_k: &'a [f64],
    pub w_v: &'a [f64],
}

pub struct AttentionGrads<'a> {
    pub w_q: &'a mut [f64],
    pub w_k: &'a mut [f64],
    pub w_v: &'a mut [f64],
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub n: usize,
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
    /// Per head, an `n × n` row-stochastic matrix.
    pub weights: Vec<f64>,
    /// `n × d_model`.
    pub output: Vec<f64>,
}

impl<'a> Attention<'a> {
    pub fn new(
        d_in: usize,
        d_model: usize,
        heads: usize,
        w_q: &'a [f64],
        w_k: &'a [f64],
        w_v: &'a [f64],
    ) -> Result<Self> {
        shape_check!(heads > 0 && d_model % heads == 0, "d_model {d_model} not divisible by {heads} heads");
        for (name, w) in [("W_q", w_q), ("W_k", w_k), ("W_v", w_v)] {
            shape_check!(
                w.len() == d_in * d_model,
                "{name} has {} entries, expected {d_in}x{d_model}",
                w.len()
            );
        }
        Ok(Self {
            d_in,
            d_model,
            heads,
            w_q,
            w_k,
            w_v,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads
    }

    /// Scaled dot-product attention over `inputs` (`n × d_in`, row-major).
    pub fn forward(&self, inputs: &[f64]) -> Result<AttentionTrace> {
        shape_check!(
            !inputs.is_empty() && inputs.len() % self.d_in == 0,
            "attention input of {} values is not a non-empty multiple of width {}",
            inputs.len(),
            self.d_in
        );
        let n = inputs.len() / self.d_in;
        let dm = self.d_model;
        let mut q = vec![0.0; n * dm];
        let mut k = vec![0.0; n * dm];
        let mut v = vec![0.0; n * dm];
        for (i, x) in inputs.chunks_exact(self.d_in).enumerate() {
            vec_mat_acc(x, self.w_q, dm, &mut q[i * dm..(i + 1) * dm]);
            vec_mat_acc(x, self.w_k, dm, &mut k[i * dm..(i + 1) * dm]);
            vec_mat_acc(x, self.w_v, dm, &mut v[i * dm..(i + 1) * dm]);
        }

        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut weights = vec![0.0; self.heads * n * n];
        let mut output = vec![0.0; n * dm];
        for h in 0..self.heads {
            let cols = h * hd..(h + 1) * hd;
            let a = &mut weights[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let qi = &q[i * dm..][cols.clone()];
                let row = &mut a[i * n..(i + 1) * n];
                for (j, r) in row.iter_mut().enumerate() {
                    *r = scale * dot(qi, &k[j * dm..][cols.clone()]);
                }
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - m).exp();
                    z += *r;
                }
                for r in row.iter_mut() {
                    *r /= z;
                }
                let out = &mut output[i * dm..][cols.clone()];
                for (j, w) in row.iter().enumerate() {
                    axpy(*w, &v[j * dm..][cols.clone()], out);
                }
            }
        }
        Ok(AttentionTrace {
            n,
            q,
            k,
            v,
            weights,
            output,
        })
    }

    /// Backpropagates `d_out` (`n × d_model`); returns `∂L/∂inputs`.
    pub fn backward(
        &self,
        inputs: &[f64],
        trace: &AttentionTrace,
        d_out: &[f64],
        grads: &mut AttentionGrads<'_>,
    ) -> Vec<f64> {
        let n = trace.n;
        let dm = self.d_model;
        let hd = self.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = vec![0.0; n * dm];
        let mut dk = vec![0.0; n * dm];
        let mut dv = vec![0.0; n * dm];
        let mut ds = vec![0.0; n];
        for h in 0..self.heads {
            let cols = h * hd..(h + 1) * hd;
            let a = &trace.weights[h * n * n..(h + 1) * n * n];
            for i in 0..n {
                let row = &a[i * n..(i + 1) * n];
                let go = &d_out[i * dm..][cols.clone()];
                // softmax backward on row i
                let mut acc = 0.0;
                for j in 0..n {
                    let da = dot(go, &trace.v[j * dm..][cols.clone()]);
                    ds[j] = da;
                    acc += da * row[j];
                }
                for j in 0..n {
                    ds[j] = row[j] * (ds[j] - acc) * scale;
                    axpy(row[j], go, &mut dv[j * dm..][cols.clone()]);
                }
                let qi = trace.q[i * dm..][cols.clone()].to_vec();
                for j in 0..n {
                    if ds[j] == 0.0 {
                        continue;
                    }
                    axpy(ds[j], &trace.k[j * dm..][cols.clone()], &mut dq[i * dm..][cols.clone()]);
                    axpy(ds[j], &qi, &mut dk[j * dm..][cols.clone()]);
                }
            }
        }
        let mut d_inputs = vec![0.0; inputs.len()];
        for (i, x) in inputs.chunks_exact(self.d_in).enumerate() {
            let dx = &mut d_inputs[i * self.d_in..(i + 1) * self.d_in];
            let r = i * dm..(i + 1) * dm;
            vec_mat_backward(x, self.w_q, dm, &dq[r.clone()], Some(dx), grads.w_q);
            vec_mat_backward(x, self.w_k, dm, &dk[r.clone()], Some(dx), grads.w_k);
            vec_mat_backward(x, self.w_v, dm, &dv[r], Some(dx), grads.w_v);
        }
        d_inputs
    }
}

/// `self_attention` as a free function returning only the outputs.
pub fn self_attention(inputs: &[f64], attention: &Attention<'_>) -> Result<Vec<f64>> {
    Ok(attention.forward(inputs)?.output)
}

/// One adopter as seen by the encoder: a row of the user table and the
/// gap to the previous adoption, already in model time units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdopterInput {
    pub user_row: usize,
    pub gap: f64,
}

/// Borrowed view of everything the snapshot encoder reads.
#[derive(Debug, Clone, Copy)]
pub struct SnapshotEncoder<'a> {
    pub user_table: &'a [f64],
    pub user_dim: usize,
    pub omegas: &'a [f64],
    pub attention: Attention<'a>,
}

pub struct EncoderGrads<'a> {
    pub user_table: &'a mut [f64],
    pub omegas: &'a mut [f64],
    pub attention: AttentionGrads<'a>,
}

#[derive(Debug, Clone)]
pub struct SnapshotTrace {
    /// Adopters in canonical order.
    pub adopters: Vec<AdopterInput>,
    pub inputs: Vec<f64>,
    pub attention: Option<AttentionTrace>,
    pub pooled: Vec<f64>,
}

impl<'a> SnapshotEncoder<'a> {
    pub fn input_dim(&self) -> usize {
        self.user_dim + encoding_dim(self.omegas.len())
    }

    /// Encodes one snapshot into a `d_model` vector. Adopters are put in
    /// canonical order (user row, then gap) first, so any permutation of
    /// the same set gives a bitwise identical result.
    pub fn embed_snapshot(&self, adopters: &[AdopterInput]) -> Result<SnapshotTrace> {
        shape_check!(
            self.attention.d_in == self.input_dim(),
            "attention expects width {}, encoder produces {}",
            self.attention.d_in,
            self.input_dim()
        );
        let mut order = adopters.to_vec();
        order.sort_by(|a, b| a.user_row.cmp(&b.user_row).then(a.gap.total_cmp(&b.gap)));
        let d_model = self.attention.d_model;
        if order.is_empty() {
            return Ok(SnapshotTrace {
                adopters: order,
                inputs: Vec::new(),
                attention: None,
                pooled: vec![0.0; d_model],
            });
        }
        let width = self.input_dim();
        let mut inputs = vec![0.0; order.len() * width];
        for (a, x) in order.iter().zip(inputs.chunks_exact_mut(width)) {
            let row = self
                .user_table
                .get(a.user_row * self.user_dim..(a.user_row + 1) * self.user_dim)
                .ok_or_else(|| Error::Shape(format!("user row {} out of range", a.user_row)))?;
            x[..self.user_dim].copy_from_slice(row);
            if !(a.gap >= 0.0) {
                return Err(Error::Argument(format!("negative time gap {}", a.gap)));
            }
            time_encode_into(a.gap, self.omegas, &mut x[self.user_dim..]);
        }
        let att = self.attention.forward(&inputs)?;
        let mut pooled = vec![0.0; d_model];
        for row in att.output.chunks_exact(d_model) {
            axpy(1.0, row, &mut pooled);
        }
        Ok(SnapshotTrace {
            adopters: order,
            inputs,
            attention: Some(att),
            pooled,
        })
    }

    pub fn backward(&self, trace: &SnapshotTrace, d_pooled: &[f64], grads: &mut EncoderGrads<'_>) {
        let Some(att) = &trace.attention else {
            return;
        };
        let d_out: Vec<f64> = d_pooled
            .iter()
            .copied()
            .cycle()
            .take(att.n * d_pooled.len())
            .collect();
        let d_inputs = self
            .attention
            .backward(&trace.inputs, att, &d_out, &mut grads.attention);
        let width = self.input_dim();
        for (a, dx) in trace.adopters.iter().zip(d_inputs.chunks_exact(width)) {
            let ud = self.user_dim;
            axpy(1.0, &dx[..ud], &mut grads.user_table[a.user_row * ud..(a.user_row + 1) * ud]);
            time_encode_backward(a.gap, self.omegas, &dx[ud..], grads.omegas);
        }
    }
}
