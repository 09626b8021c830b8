//! Macro-scale encoder over the snapshot sequence: an input projection,
//! `K` gated dilated causal convolution layers with identity residuals,
//! and a skip-connection readout at the final time step.
//!
//! Sequences are stored time-major (`T × channels`). A kernel of size `κ`
//! is stored as `κ` blocks of `(in, out)` weights; tap `s` of a layer with
//! dilation `d` reads the input `d·s` steps in the past, and missing past
//! steps are zero.

use crate::error::shape_check;
use crate::linalg::{axpy, sigmoid, vec_mat_acc, vec_mat_backward};
use crate::Result;

/// Receptive field of `layers` layers with dilations `1, 2, 4, …`.
pub fn receptive_field(kernel_size: usize, layers: usize) -> usize {
    1 + (kernel_size - 1) * ((1usize << layers) - 1)
}

/// Causal dilated convolution of `x` (`T × c_in`) with `kernel`
/// (`κ × c_in × c_out`); the output has the same length as `x`.
pub fn dilated_causal_conv(
    x: &[f64],
    c_in: usize,
    kernel: &[f64],
    c_out: usize,
    dilation: usize,
) -> Result<Vec<f64>> {
    shape_check!(dilation >= 1, "dilation must be >= 1");
    shape_check!(c_in > 0 && x.len() % c_in == 0, "input length {} not a multiple of {c_in} channels", x.len());
    shape_check!(
        c_out > 0 && kernel.len() % (c_in * c_out) == 0 && !kernel.is_empty(),
        "kernel of {} weights does not match {c_in}x{c_out} channels",
        kernel.len()
    );
    let mut y = vec![0.0; x.len() / c_in * c_out];
    conv_acc(x, c_in, kernel, c_out, dilation, &mut y);
    Ok(y)
}

fn conv_acc(x: &[f64], c_in: usize, kernel: &[f64], c_out: usize, dilation: usize, y: &mut [f64]) {
    let steps = x.len() / c_in;
    let block = c_in * c_out;
    for t in 0..steps {
        let out = &mut y[t * c_out..(t + 1) * c_out];
        for (s, taps) in kernel.chunks_exact(block).enumerate() {
            let Some(src) = t.checked_sub(dilation * s) else {
                break;
            };
            vec_mat_acc(&x[src * c_in..(src + 1) * c_in], taps, c_out, out);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    c_in: usize,
    kernel: &[f64],
    c_out: usize,
    dilation: usize,
    dy: &[f64],
    dx: &mut [f64],
    dk: &mut [f64],
) {
    let steps = x.len() / c_in;
    let block = c_in * c_out;
    for t in 0..steps {
        let g = &dy[t * c_out..(t + 1) * c_out];
        for s in 0..kernel.len() / block {
            let Some(src) = t.checked_sub(dilation * s) else {
                break;
            };
            vec_mat_backward(
                &x[src * c_in..(src + 1) * c_in],
                &kernel[s * block..(s + 1) * block],
                c_out,
                g,
                Some(&mut dx[src * c_in..(src + 1) * c_in]),
                &mut dk[s * block..(s + 1) * block],
            );
        }
    }
}

/// One gated layer: `z_k = tanh(θ¹ ⋆ z) ⊙ σ(θ² ⋆ z) + z`.
#[derive(Debug, Clone, Copy)]
pub struct GatedLayer<'a> {
    pub filter: &'a [f64],
    pub gate: &'a [f64],
    /// Skip projection `(hidden, hidden)`.
    pub skip: &'a [f64],
    pub dilation: usize,
}

pub struct GatedLayerGrads<'a> {
    pub filter: &'a mut [f64],
    pub gate: &'a mut [f64],
    pub skip: &'a mut [f64],
}

/// Applies one gated residual layer to `z_prev` (`T × width`).
pub fn gated_residual_layer(z_prev: &[f64], width: usize, layer: &GatedLayer<'_>) -> Result<Vec<f64>> {
    shape_check!(
        layer.filter.len() == layer.gate.len() && layer.filter.len() % (width * width) == 0,
        "layer kernels do not match width {width}"
    );
    let a = dilated_causal_conv(z_prev, width, layer.filter, width, layer.dilation)?;
    let g = dilated_causal_conv(z_prev, width, layer.gate, width, layer.dilation)?;
    Ok(a.iter()
        .zip(&g)
        .zip(z_prev)
        .map(|((a, g), z)| a.tanh() * sigmoid(*g) + z)
        .collect())
}

/// Borrowed view of the whole stack.
#[derive(Debug, Clone)]
pub struct TemporalStack<'a> {
    /// Width of `[z_t, log2(1 + p_t)]`.
    pub input_dim: usize,
    pub hidden: usize,
    pub w_in: &'a [f64],
    pub b_in: &'a [f64],
    pub layers: Vec<GatedLayer<'a>>,
    pub w_out: &'a [f64],
    pub b_out: &'a [f64],
}

pub struct TemporalGrads<'a> {
    pub w_in: &'a mut [f64],
    pub b_in: &'a mut [f64],
    pub layers: Vec<GatedLayerGrads<'a>>,
    pub w_out: &'a mut [f64],
    pub b_out: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub struct TemporalTrace {
    pub steps: usize,
    pub inputs: Vec<f64>,
    /// `z_0 … z_K`, each `T × hidden`.
    pub z: Vec<Vec<f64>>,
    pub tanh: Vec<Vec<f64>>,
    pub gate: Vec<Vec<f64>>,
    pub skip_sum: Vec<f64>,
    pub output: Vec<f64>,
}

impl<'a> TemporalStack<'a> {
    /// Runs the stack on snapshot embeddings (`T × (input_dim − 1)`) and the
    /// popularity series, which is fed as `log2(1 + p_t)`.
    pub fn forward(&self, embeddings: &[f64], popularity: &[f64]) -> Result<TemporalTrace> {
        let steps = popularity.len();
        let d = self.input_dim - 1;
        shape_check!(steps >= 1, "need at least one snapshot");
        shape_check!(
            embeddings.len() == steps * d,
            "{} embedding values for {steps} snapshots of width {d}",
            embeddings.len()
        );
        let h = self.hidden;
        let mut inputs = Vec::with_capacity(steps * self.input_dim);
        for (t, p) in popularity.iter().enumerate() {
            inputs.extend_from_slice(&embeddings[t * d..(t + 1) * d]);
            inputs.push(crate::cascade_data::log2_1p(*p));
        }
        let mut z0 = vec![0.0; steps * h];
        for (x, out) in inputs.chunks_exact(self.input_dim).zip(z0.chunks_exact_mut(h)) {
            out.copy_from_slice(self.b_in);
            vec_mat_acc(x, self.w_in, h, out);
        }

        let mut z = vec![z0];
        let mut tanh = Vec::with_capacity(self.layers.len());
        let mut gate = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = z.last().expect("z_0 present");
            let mut a = vec![0.0; steps * h];
            let mut g = vec![0.0; steps * h];
            conv_acc(prev, h, layer.filter, h, layer.dilation, &mut a);
            conv_acc(prev, h, layer.gate, h, layer.dilation, &mut g);
            a.iter_mut().for_each(|v| *v = v.tanh());
            g.iter_mut().for_each(|v| *v = sigmoid(*v));
            let next: Vec<f64> = a.iter().zip(&g).zip(prev).map(|((a, g), p)| a * g + p).collect();
            tanh.push(a);
            gate.push(g);
            z.push(next);
        }

        let last = (steps - 1) * h..steps * h;
        let mut skip_sum = vec![0.0; h];
        for (layer, zk) in self.layers.iter().zip(&z[1..]) {
            vec_mat_acc(&zk[last.clone()], layer.skip, h, &mut skip_sum);
        }
        let mut output = self.b_out.to_vec();
        vec_mat_acc(&skip_sum, self.w_out, h, &mut output);
        Ok(TemporalTrace {
            steps,
            inputs,
            z,
            tanh,
            gate,
            skip_sum,
            output,
        })
    }

    /// Backpropagates `d_output`; returns `∂L/∂embeddings` (`T × (input_dim − 1)`).
    pub fn backward(&self, trace: &TemporalTrace, d_output: &[f64], grads: &mut TemporalGrads<'_>) -> Vec<f64> {
        let h = self.hidden;
        let steps = trace.steps;
        axpy(1.0, d_output, grads.b_out);
        let mut d_skip = vec![0.0; h];
        vec_mat_backward(&trace.skip_sum, self.w_out, h, d_output, Some(&mut d_skip), grads.w_out);

        let last = (steps - 1) * h..steps * h;
        let mut dz = vec![0.0; steps * h];
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let g = &mut grads.layers[k];
            vec_mat_backward(
                &trace.z[k + 1][last.clone()],
                layer.skip,
                h,
                &d_skip,
                Some(&mut dz[last.clone()]),
                g.skip,
            );
            let th = &trace.tanh[k];
            let sg = &trace.gate[k];
            let mut d_filter = vec![0.0; steps * h];
            let mut d_gate = vec![0.0; steps * h];
            for i in 0..steps * h {
                d_filter[i] = dz[i] * sg[i] * (1.0 - th[i] * th[i]);
                d_gate[i] = dz[i] * th[i] * sg[i] * (1.0 - sg[i]);
            }
            // residual path keeps dz; conv paths add to it
            let prev = &trace.z[k];
            conv_backward(prev, h, layer.filter, h, layer.dilation, &d_filter, &mut dz, g.filter);
            conv_backward(prev, h, layer.gate, h, layer.dilation, &d_gate, &mut dz, g.gate);
        }

        let d = self.input_dim - 1;
        let mut d_embeddings = vec![0.0; steps * d];
        let mut dx = vec![0.0; self.input_dim];
        for t in 0..steps {
            let g = &dz[t * h..(t + 1) * h];
            axpy(1.0, g, grads.b_in);
            dx.iter_mut().for_each(|v| *v = 0.0);
            vec_mat_backward(
                &trace.inputs[t * self.input_dim..(t + 1) * self.input_dim],
                self.w_in,
                h,
                g,
                Some(&mut dx),
                grads.w_in,
            );
            d_embeddings[t * d..(t + 1) * d].copy_from_slice(&dx[..d]);
        }
        d_embeddings
    }
}

/// `temporal_forward` as a free function returning `Z_h`.
pub fn temporal_forward(stack: &TemporalStack<'_>, embeddings: &[f64], popularity: &[f64]) -> Result<Vec<f64>> {
    Ok(stack.forward(embeddings, popularity)?.output)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::Error;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn reference_convolutions() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(dilated_causal_conv(&x, 1, &[1.0, 1.0], 1, 1).unwrap(), [1.0, 3.0, 5.0, 7.0]);
        assert_eq!(dilated_causal_conv(&x, 1, &[1.0, 1.0], 1, 2).unwrap(), [1.0, 2.0, 4.0, 6.0]);
        assert_eq!(dilated_causal_conv(&x, 1, &[1.0, 0.0], 1, 1).unwrap(), x);
    }

    #[test]
    fn conv_shape_errors() {
        assert!(matches!(dilated_causal_conv(&[1.0, 2.0, 3.0], 2, &[1.0; 4], 1, 1), Err(Error::Shape(_))));
        assert!(matches!(dilated_causal_conv(&[1.0; 4], 2, &[1.0; 3], 1, 1), Err(Error::Shape(_))));
        assert!(matches!(dilated_causal_conv(&[1.0; 4], 1, &[1.0; 2], 1, 0), Err(Error::Shape(_))));
    }

    #[test]
    fn receptive_fields() {
        assert_eq!(receptive_field(2, 3), 8);
        assert_eq!(receptive_field(3, 2), 7);
    }

    fn random(rng: &mut impl Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-0.8..0.8)).collect()
    }

    #[test]
    fn zero_kernels_are_identity_layer() {
        let z = [0.3, -1.2, 4.0, 0.0, 2.5, -0.1];
        let zero = vec![0.0; 2 * 2 * 2];
        let layer = GatedLayer { filter: &zero, gate: &zero, skip: &[], dilation: 1 };
        assert_eq!(gated_residual_layer(&z, 2, &layer).unwrap(), z);
    }

    #[test]
    fn gated_layer_matches_scalar_loop_and_stays_within_unit_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (t_len, w, kappa, dil) = (6, 3, 2, 2);
        for _ in 0..25 {
            let z = random(&mut rng, t_len * w);
            let f: Vec<f64> = random(&mut rng, kappa * w * w).iter().map(|v| v * 3.0).collect();
            let g: Vec<f64> = random(&mut rng, kappa * w * w).iter().map(|v| v * 3.0).collect();
            let layer = GatedLayer { filter: &f, gate: &g, skip: &[], dilation: dil };
            let got = gated_residual_layer(&z, w, &layer).unwrap();
            for t in 0..t_len {
                for o in 0..w {
                    let mut a = 0.0;
                    let mut b = 0.0;
                    for s in 0..kappa {
                        if t < dil * s {
                            continue;
                        }
                        for c in 0..w {
                            let x = z[(t - dil * s) * w + c];
                            a += f[s * w * w + c * w + o] * x;
                            b += g[s * w * w + c * w + o] * x;
                        }
                    }
                    let want = a.tanh() * (1.0 / (1.0 + (-b).exp())) + z[t * w + o];
                    let i = t * w + o;
                    assert!((got[i] - want).abs() < 1e-12);
                    assert!((got[i] - z[i]).abs() < 1.0);
                }
            }
        }
    }

    struct Owned {
        input_dim: usize,
        hidden: usize,
        w_in: Vec<f64>,
        b_in: Vec<f64>,
        filters: Vec<Vec<f64>>,
        gates: Vec<Vec<f64>>,
        skips: Vec<Vec<f64>>,
        w_out: Vec<f64>,
        b_out: Vec<f64>,
    }

    impl Owned {
        fn random(seed: u64, d: usize, hidden: usize, layers: usize, kappa: usize) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hh = hidden * hidden;
            Self {
                input_dim: d + 1,
                hidden,
                w_in: random(&mut rng, (d + 1) * hidden),
                b_in: random(&mut rng, hidden),
                filters: (0..layers).map(|_| random(&mut rng, kappa * hh)).collect(),
                gates: (0..layers).map(|_| random(&mut rng, kappa * hh)).collect(),
                skips: (0..layers).map(|_| random(&mut rng, hh)).collect(),
                w_out: random(&mut rng, hh),
                b_out: random(&mut rng, hidden),
            }
        }

        fn view(&self) -> TemporalStack<'_> {
            TemporalStack {
                input_dim: self.input_dim,
                hidden: self.hidden,
                w_in: &self.w_in,
                b_in: &self.b_in,
                layers: (0..self.filters.len())
                    .map(|k| GatedLayer {
                        filter: &self.filters[k],
                        gate: &self.gates[k],
                        skip: &self.skips[k],
                        dilation: 1 << k,
                    })
                    .collect(),
                w_out: &self.w_out,
                b_out: &self.b_out,
            }
        }
    }

    #[test]
    fn perturbation_only_affects_later_steps() {
        let m = Owned::random(3, 2, 3, 3, 2);
        let stack = m.view();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let emb = random(&mut rng, 8 * 2);
        let pop: Vec<f64> = (0..8).map(|t| (t * 3) as f64).collect();
        let base = stack.forward(&emb, &pop).unwrap();
        for t0 in 0..8 {
            let mut e2 = emb.clone();
            e2[t0 * 2] += 0.5;
            let pert = stack.forward(&e2, &pop).unwrap();
            for (zb, zp) in base.z.iter().zip(&pert.z) {
                for t in 0..t0 {
                    assert_eq!(&zb[t * 3..(t + 1) * 3], &zp[t * 3..(t + 1) * 3]);
                }
                assert_ne!(&zb[t0 * 3..(t0 + 1) * 3], &zp[t0 * 3..(t0 + 1) * 3]);
            }
        }
    }

    #[test]
    fn zeroing_the_future_keeps_the_past() {
        let m = Owned::random(5, 2, 3, 3, 2);
        let stack = m.view();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let emb = random(&mut rng, 6 * 2);
        let pop = vec![1.0, 2.0, 4.0, 8.0, 9.0, 9.0];
        let t0 = 2;
        let mut emb2 = emb.clone();
        emb2[(t0 + 1) * 2..].iter_mut().for_each(|v| *v = 0.0);
        let mut pop2 = pop.clone();
        pop2[t0 + 1..].iter_mut().for_each(|v| *v = 0.0);
        let a = stack.forward(&emb, &pop).unwrap();
        let b = stack.forward(&emb2, &pop2).unwrap();
        for (za, zb) in a.z.iter().zip(&b.z) {
            assert_eq!(&za[..(t0 + 1) * 3], &zb[..(t0 + 1) * 3]);
        }
    }

    #[test]
    fn zero_kernels_reduce_to_affine_readout() {
        // hidden 2, one embedding channel, two layers with zero convolutions
        let zero = vec![0.0; 2 * 4];
        let skip1 = [1.0, 0.0, 0.0, 2.0];
        let skip2 = [0.0, 1.0, 1.0, 0.0];
        let w_in = [1.0, 0.5, -1.0, 2.0]; // rows: embedding, log popularity
        let b_in = [0.1, -0.2];
        let w_out = [1.0, 1.0, 0.0, 3.0];
        let b_out = [0.5, 0.0];
        let stack = TemporalStack {
            input_dim: 2,
            hidden: 2,
            w_in: &w_in,
            b_in: &b_in,
            layers: vec![
                GatedLayer { filter: &zero, gate: &zero, skip: &skip1, dilation: 1 },
                GatedLayer { filter: &zero, gate: &zero, skip: &skip2, dilation: 2 },
            ],
            w_out: &w_out,
            b_out: &b_out,
        };
        // last step: embedding 2.0, popularity 3 -> log2(4) = 2
        let out = temporal_forward(&stack, &[7.0, 2.0], &[1.0, 3.0]).unwrap();
        // z0 = [2*1 + 2*(-1) + 0.1, 2*0.5 + 2*2 - 0.2] = [0.1, 4.8]
        // skip sum = z0·S1 + z0·S2 = [0.1, 9.6] + [4.8, 0.1] = [4.9, 9.7]
        // Z_h = [4.9, 4.9 + 29.1] + [0.5, 0] = [5.4, 34.0]
        assert!((out[0] - 5.4).abs() < 1e-12);
        assert!((out[1] - 34.0).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_shape_error() {
        let m = Owned::random(1, 2, 3, 2, 2);
        assert!(matches!(m.view().forward(&[0.0; 6], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(m.view().forward(&[], &[]), Err(Error::Shape(_))));
    }

    fn objective(m: &Owned, emb: &[f64], pop: &[f64], c: &[f64]) -> f64 {
        dot(&temporal_forward(&m.view(), emb, pop).unwrap(), c)
    }

    #[test]
    fn gradients_match_central_differences() {
        let (d, hidden, layers, kappa, steps) = (3, 4, 3, 2, 7);
        for seed in 0..5 {
            let mut m = Owned::random(seed, d, hidden, layers, kappa);
            let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
            let emb = random(&mut rng, steps * d);
            let pop: Vec<f64> = (0..steps).map(|t| (t * t) as f64).collect();
            let c = random(&mut rng, hidden);

            let mut g = Owned::random(seed, d, hidden, layers, kappa);
            for v in [&mut g.w_in, &mut g.b_in, &mut g.w_out, &mut g.b_out] {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            for v in g.filters.iter_mut().chain(g.gates.iter_mut()).chain(g.skips.iter_mut()) {
                v.iter_mut().for_each(|x| *x = 0.0);
            }
            let d_emb = {
                let stack = m.view();
                let trace = stack.forward(&emb, &pop).unwrap();
                let mut grads = TemporalGrads {
                    w_in: &mut g.w_in,
                    b_in: &mut g.b_in,
                    layers: g
                        .filters
                        .iter_mut()
                        .zip(g.gates.iter_mut())
                        .zip(g.skips.iter_mut())
                        .map(|((f, gt), s)| GatedLayerGrads { filter: f, gate: gt, skip: s })
                        .collect(),
                    w_out: &mut g.w_out,
                    b_out: &mut g.b_out,
                };
                stack.backward(&trace, &c, &mut grads)
            };

            let h = 1e-5;
            let close = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-5) < 1e-4;
            macro_rules! check {
                ($field:expr, $analytic:expr) => {
                    for i in 0..$analytic.len() {
                        let orig = $field[i];
                        $field[i] = orig + h;
                        let up = objective(&m, &emb, &pop, &c);
                        $field[i] = orig - h;
                        let dn = objective(&m, &emb, &pop, &c);
                        $field[i] = orig;
                        let fd = (up - dn) / (2.0 * h);
                        assert!(close($analytic[i], fd), "{} [{i}]: {} vs {fd}", stringify!($field), $analytic[i]);
                    }
                };
            }
            check!(m.w_in, g.w_in);
            check!(m.b_in, g.b_in);
            check!(m.w_out, g.w_out);
            check!(m.b_out, g.b_out);
            for k in 0..layers {
                check!(m.filters[k], g.filters[k]);
                check!(m.gates[k], g.gates[k]);
                check!(m.skips[k], g.skips[k]);
            }
            let mut e = emb.clone();
            for i in 0..e.len() {
                let orig = e[i];
                e[i] = orig + h;
                let up = objective(&m, &e, &pop, &c);
                e[i] = orig - h;
                let dn = objective(&m, &e, &pop, &c);
                e[i] = orig;
                assert!(close(d_emb[i], (up - dn) / (2.0 * h)));
            }
        }
    }
}
