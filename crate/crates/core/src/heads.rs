//! Output heads: a two-layer neural predictor and the physics head that
//! turns `Z_p` into per-sample Richards parameters.

use crate::cascade_data::log2_1p;
use crate::error::shape_check;
use crate::linalg::{sigmoid, softplus, vec_mat_acc, vec_mat_backward};
use crate::richards::RichardsParams;
use crate::Result;

/// `Y_pred = ReLU(z·W1 + b1)·W2 + b2` with `W1: hidden × hidden`,
/// `W2: hidden × 1` and a one-element `b2`.
#[derive(Debug, Clone, Copy)]
pub struct PredictionHead<'a> {
    pub hidden: usize,
    pub w1: &'a [f64],
    pub b1: &'a [f64],
    pub w2: &'a [f64],
    pub b2: &'a [f64],
}

pub struct PredictionGrads<'a> {
    pub w1: &'a mut [f64],
    pub b1: &'a mut [f64],
    pub w2: &'a mut [f64],
    pub b2: &'a mut [f64],
}

#[derive(Debug, Clone)]
pub struct PredictionTrace {
    /// Post-rectifier inner layer.
    pub inner: Vec<f64>,
    pub output: f64,
}

impl PredictionHead<'_> {
    pub fn forward(&self, z: &[f64]) -> Result<PredictionTrace> {
        let h = self.hidden;
        shape_check!(z.len() == h, "prediction head expects width {h}, got {}", z.len());
        shape_check!(
            self.w1.len() == h * h && self.b1.len() == h && self.w2.len() == h && self.b2.len() == 1,
            "prediction head parameters do not match hidden width {h}"
        );
        let mut inner = self.b1.to_vec();
        vec_mat_acc(z, self.w1, h, &mut inner);
        inner.iter_mut().for_each(|v| *v = v.max(0.0));
        let output = self.b2[0] + crate::linalg::dot(&inner, self.w2);
        Ok(PredictionTrace { inner, output })
    }

    /// Accumulates parameter gradients and `∂L/∂z` for upstream `dy`.
    pub fn backward(&self, z: &[f64], trace: &PredictionTrace, dy: f64, grads: &mut PredictionGrads<'_>, dz: &mut [f64]) {
        grads.b2[0] += dy;
        let mut d_inner = vec![0.0; self.hidden];
        for (g, a) in grads.w2.iter_mut().zip(&trace.inner) {
            *g += dy * a;
        }
        for ((d, w), a) in d_inner.iter_mut().zip(self.w2).zip(&trace.inner) {
            // the kink itself is treated as inactive
            *d = if *a > 0.0 { dy * w } else { 0.0 };
        }
        crate::linalg::axpy(1.0, &d_inner, grads.b1);
        vec_mat_backward(z, self.w1, self.hidden, &d_inner, Some(dz), grads.w1);
    }
}

pub fn neural_prediction(z: &[f64], head: &PredictionHead<'_>) -> Result<f64> {
    Ok(head.forward(z)?.output)
}

/// Four affine maps from `Z_p` packed as one `hidden × 4` matrix with
/// columns (α, β, γ, δ), each shifted by a fixed `offset`, passed through
/// Softplus and multiplied by a fixed per-parameter `scale`.
#[derive(Debug, Clone, Copy)]
pub struct PhysicsHead<'a> {
    pub hidden: usize,
    pub w: &'a [f64],
    pub b: &'a [f64],
    pub scale: [f64; 4],
    /// Fixed shift added to each affine output before the Softplus.
    pub offset: [f64; 4],
}

pub struct PhysicsGrads<'a> {
    pub w: &'a mut [f64],
    pub b: &'a mut [f64],
}

#[derive(Debug, Clone, Copy)]
pub struct PhysicsTrace {
    pub affine: [f64; 4],
    pub params: RichardsParams,
}

impl<'a> PhysicsHead<'a> {
    /// A head whose parameters are exactly the Softplus outputs.
    pub fn unscaled(hidden: usize, w: &'a [f64], b: &'a [f64]) -> Self {
        Self {
            hidden,
            w,
            b,
            scale: [1.0; 4],
            offset: [0.0; 4],
        }
    }

    pub fn forward(&self, z: &[f64]) -> Result<PhysicsTrace> {
        let h = self.hidden;
        shape_check!(z.len() == h, "physics head expects width {h}, got {}", z.len());
        shape_check!(
            self.w.len() == 4 * h && self.b.len() == 4,
            "physics head parameters do not match hidden width {h}"
        );
        let mut affine = [0.0; 4];
        affine.copy_from_slice(self.b);
        vec_mat_acc(z, self.w, 4, &mut affine);
        for k in 0..4 {
            affine[k] += self.offset[k];
        }
        let mut p = [0.0; 4];
        for k in 0..4 {
            // softplus underflows to zero below about −745
            p[k] = (self.scale[k] * softplus(affine[k])).max(f64::MIN_POSITIVE);
        }
        Ok(PhysicsTrace {
            affine,
            params: RichardsParams::from_array(p),
        })
    }

    /// Backward from `∂L/∂(α, β, γ, δ)`.
    pub fn backward(&self, z: &[f64], trace: &PhysicsTrace, d_params: [f64; 4], grads: &mut PhysicsGrads<'_>, dz: &mut [f64]) {
        let mut d_affine = [0.0; 4];
        for k in 0..4 {
            d_affine[k] = d_params[k] * self.scale[k] * sigmoid(trace.affine[k]);
            grads.b[k] += d_affine[k];
        }
        vec_mat_backward(z, self.w, 4, &d_affine, Some(dz), grads.w);
    }
}

pub fn physics_parameters(z: &[f64], head: &PhysicsHead<'_>) -> Result<RichardsParams> {
    Ok(head.forward(z)?.params)
}

/// `Ŷ_t = log2(1 + R(t))` at each snapshot time.
pub fn physics_reconstruct(params: &RichardsParams, times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| log2_1p(params.eval(*t))).collect()
}

/// Gradient of `Σ_t d_out[t]·Ŷ_t` with respect to the parameters.
pub fn physics_reconstruct_backward(params: &RichardsParams, times: &[f64], d_out: &[f64]) -> [f64; 4] {
    let mut grad = [0.0; 4];
    for (t, d) in times.iter().zip(d_out) {
        let (y, g) = params.eval_with_gradient(*t);
        let outer = d / ((1.0 + y) * std::f64::consts::LN_2);
        for k in 0..4 {
            grad[k] += outer * g[k];
        }
    }
    grad
}

/// `Y_phy = log2(1 + max(R(T_p) − P_o, 0))`, on the label scale.
pub fn physics_increment(params: &RichardsParams, horizon_step: f64, observed: f64) -> f64 {
    log2_1p((params.eval(horizon_step) - observed).max(0.0))
}

/// Gradient of `Y_phy`; zero while the curve sits below `P_o`.
pub fn physics_increment_backward(params: &RichardsParams, horizon_step: f64, observed: f64) -> [f64; 4] {
    let (y, g) = params.eval_with_gradient(horizon_step);
    let inc = y - observed;
    if inc <= 0.0 {
        return [0.0; 4];
    }
    let outer = 1.0 / ((1.0 + inc) * std::f64::consts::LN_2);
    g.map(|x| x * outer)
}
