//! Student-t soft assignment of hidden representations to learnable
//! centers, the sharpened target distribution, the KL clustering loss,
//! and injection of the assigned center back into the representation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::shape_check;
use crate::linalg::{argmax, axpy, squared_distance};
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterBank {
    /// `C × dim`, row-major.
    pub centers: Vec<f64>,
    pub dim: usize,
    /// Degrees of freedom of the Student-t kernel.
    pub dof: f64,
}

impl ClusterBank {
    pub fn new(centers: Vec<f64>, dim: usize, dof: f64) -> Result<Self> {
        shape_check!(
            dim > 0 && !centers.is_empty() && centers.len() % dim == 0,
            "{} center values do not form rows of width {dim}",
            centers.len()
        );
        if !(dof > 0.0) {
            return Err(crate::Error::Argument(format!("dof must be positive, got {dof}")));
        }
        Ok(Self { centers, dim, dof })
    }

    pub fn view(&self) -> Centers<'_> {
        Centers {
            data: &self.centers,
            dim: self.dim,
            dof: self.dof,
        }
    }

    pub fn clusters(&self) -> usize {
        self.centers.len() / self.dim
    }
}

/// Borrowed centers, as used inside the model.
#[derive(Debug, Clone, Copy)]
pub struct Centers<'a> {
    pub data: &'a [f64],
    pub dim: usize,
    pub dof: f64,
}

impl Centers<'_> {
    pub fn clusters(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }
}

/// Soft assignment of one sample. Writes `q` and the squared distances.
pub fn soft_assign_row(z: &[f64], centers: &Centers<'_>, q: &mut [f64], dist: &mut [f64]) {
    let v = centers.dof;
    let power = -(v + 1.0) / 2.0;
    for j in 0..centers.clusters() {
        dist[j] = squared_distance(z, centers.center(j));
    }
    // normalise in log space so far-away samples do not underflow to 0/0
    let mut max_log = f64::NEG_INFINITY;
    for j in 0..q.len() {
        q[j] = power * (dist[j] / v).ln_1p();
        max_log = max_log.max(q[j]);
    }
    let mut total = 0.0;
    for x in q.iter_mut() {
        *x = (*x - max_log).exp();
        total += *x;
    }
    q.iter_mut().for_each(|x| *x /= total);
}

/// `q_ij ∝ (1 + ‖z_i − μ_j‖²/v)^(−(v+1)/2)` for an `N × dim` matrix.
pub fn soft_assign(z: &[f64], bank: &ClusterBank) -> Result<Vec<f64>> {
    shape_check!(
        !z.is_empty() && z.len() % bank.dim == 0,
        "representations of {} values do not match width {}",
        z.len(),
        bank.dim
    );
    let c = bank.clusters();
    let centers = bank.view();
    let mut q = vec![0.0; z.len() / bank.dim * c];
    let mut dist = vec![0.0; c];
    for (row, out) in z.chunks_exact(bank.dim).zip(q.chunks_exact_mut(c)) {
        soft_assign_row(row, &centers, out, &mut dist);
    }
    Ok(q)
}

/// `p_ij ∝ q_ij² / f_j` with soft frequencies `f_j = Σ_i q_ij`.
pub fn target_distribution(q: &[f64], clusters: usize) -> Vec<f64> {
    let mut freq = vec![0.0; clusters];
    for row in q.chunks_exact(clusters) {
        axpy(1.0, row, &mut freq);
    }
    let mut p = vec![0.0; q.len()];
    for (qr, pr) in q.chunks_exact(clusters).zip(p.chunks_exact_mut(clusters)) {
        let mut total = 0.0;
        for j in 0..clusters {
            // a cluster nobody occupies gets no target mass
            pr[j] = if freq[j] > 0.0 { qr[j] * qr[j] / freq[j] } else { 0.0 };
            total += pr[j];
        }
        pr.iter_mut().for_each(|x| *x /= total);
    }
    p
}

/// `Σ_i Σ_j p_ij ln(p_ij / q_ij)`; zero entries of `p` contribute nothing.
pub fn clustering_loss(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| p * (p / q).ln())
        .sum()
}

/// Soft and target distributions for a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub clusters: usize,
}

impl AssignmentMatrix {
    pub fn from_representations(z: &[f64], bank: &ClusterBank) -> Result<Self> {
        let q = soft_assign(z, bank)?;
        let p = target_distribution(&q, bank.clusters());
        Ok(Self {
            q,
            p,
            clusters: bank.clusters(),
        })
    }

    pub fn hard_assignments(&self) -> Vec<usize> {
        self.q.chunks_exact(self.clusters).map(argmax).collect()
    }
}

/// How the assigned center is added back onto `Z_h`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Add the center with the largest `q` (lowest index on ties).
    #[default]
    Hard,
    /// Add `Σ_j q_j μ_j`.
    Soft,
}

pub fn inject_row(z: &[f64], q: &[f64], centers: &Centers<'_>, mode: Injection, out: &mut [f64]) {
    out.copy_from_slice(z);
    match mode {
        Injection::Hard => axpy(1.0, centers.center(argmax(q)), out),
        Injection::Soft => {
            for (j, w) in q.iter().enumerate() {
                axpy(*w, centers.center(j), out);
            }
        }
    }
}

/// `Z_p = Z_h ⊕ C_e` for an `N × dim` batch.
pub fn inject_centers(z: &[f64], q: &[f64], bank: &ClusterBank, mode: Injection) -> Result<Vec<f64>> {
    let c = bank.clusters();
    shape_check!(
        z.len() % bank.dim == 0 && z.len() / bank.dim * c == q.len(),
        "representations and assignments disagree on batch size"
    );
    let centers = bank.view();
    let mut out = vec![0.0; z.len()];
    for ((zr, qr), o) in z
        .chunks_exact(bank.dim)
        .zip(q.chunks_exact(c))
        .zip(out.chunks_exact_mut(bank.dim))
    {
        inject_row(zr, qr, &centers, mode, o);
    }
    Ok(out)
}

/// Chains `∂L/∂ln k_j` (unnormalised Student-t kernel) back to `z` and the
/// centers.
fn backprop_log_kernel(
    d_log_kernel: &[f64],
    z: &[f64],
    centers: &Centers<'_>,
    dist: &[f64],
    dz: &mut [f64],
    d_centers: &mut [f64],
) {
    let v = centers.dof;
    let dim = centers.dim;
    let mut diff = vec![0.0; dim];
    for (j, g) in d_log_kernel.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        // ln k = −(v+1)/2 · ln(1 + d/v)
        let dd = g * (-(v + 1.0) / (2.0 * v)) / (1.0 + dist[j] / v);
        for ((df, zi), mi) in diff.iter_mut().zip(z).zip(centers.center(j)) {
            *df = 2.0 * (zi - mi) * dd;
        }
        axpy(1.0, &diff, dz);
        axpy(-1.0, &diff, &mut d_centers[j * dim..(j + 1) * dim]);
    }
}

/// Gradient of `scale · KL(p ‖ q)` for one sample, with `p` held fixed.
pub fn clustering_loss_backward(
    p: &[f64],
    q: &[f64],
    dist: &[f64],
    z: &[f64],
    centers: &Centers<'_>,
    scale: f64,
    dz: &mut [f64],
    d_centers: &mut [f64],
) {
    let d_log_kernel: Vec<f64> = q.iter().zip(p).map(|(q, p)| scale * (q - p)).collect();
    backprop_log_kernel(&d_log_kernel, z, centers, dist, dz, d_centers);
}

/// Backward of [`inject_row`] given `∂L/∂Z_p`.
#[allow(clippy::too_many_arguments)]
pub fn inject_backward(
    d_out: &[f64],
    z: &[f64],
    q: &[f64],
    dist: &[f64],
    centers: &Centers<'_>,
    mode: Injection,
    dz: &mut [f64],
    d_centers: &mut [f64],
) {
    let dim = centers.dim;
    axpy(1.0, d_out, dz);
    match mode {
        Injection::Hard => {
            let j = argmax(q);
            axpy(1.0, d_out, &mut d_centers[j * dim..(j + 1) * dim]);
        }
        Injection::Soft => {
            let dq: Vec<f64> = (0..q.len())
                .map(|j| crate::linalg::dot(centers.center(j), d_out))
                .collect();
            for (j, w) in q.iter().enumerate() {
                axpy(*w, d_out, &mut d_centers[j * dim..(j + 1) * dim]);
            }
            let mean: f64 = q.iter().zip(&dq).map(|(a, b)| a * b).sum();
            let d_log_kernel: Vec<f64> = q.iter().zip(&dq).map(|(qj, g)| qj * (g - mean)).collect();
            backprop_log_kernel(&d_log_kernel, z, centers, dist, dz, d_centers);
        }
    }
}

/// k-means++ seeding followed by Lloyd iterations. Returns `k × dim`
/// centers. Empty clusters keep their previous center.
pub fn kmeans(points: &[f64], dim: usize, k: usize, iterations: usize, rng: &mut impl Rng) -> Vec<f64> {
    let n = points.len() / dim;
    assert!(n >= 1 && k >= 1, "k-means needs points and clusters");
    let row = |i: usize| &points[i * dim..(i + 1) * dim];
    let mut centers = Vec::with_capacity(k * dim);
    centers.extend_from_slice(row(rng.gen_range(0..n)));
    let mut nearest: Vec<f64> = (0..n).map(|i| squared_distance(row(i), &centers[..dim])).collect();
    for _ in 1..k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen_range(0.0..total);
            let mut chosen = n - 1;
            for (i, d) in nearest.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.gen_range(0..n)
        };
        let start = centers.len();
        centers.extend_from_slice(row(pick));
        for (i, d) in nearest.iter_mut().enumerate() {
            *d = d.min(squared_distance(row(i), &centers[start..start + dim]));
        }
    }

    let mut labels = vec![usize::MAX; n];
    for _ in 0..iterations {
        let mut changed = false;
        for (i, label) in labels.iter_mut().enumerate() {
            let best = (0..k)
                .map(|j| squared_distance(row(i), &centers[j * dim..(j + 1) * dim]))
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(j, _)| j)
                .expect("k >= 1");
            changed |= *label != best;
            *label = best;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            axpy(1.0, row(i), &mut sums[l * dim..(l + 1) * dim]);
            counts[l] += 1;
        }
        for j in 0..k {
            if counts[j] > 0 {
                for d in 0..dim {
                    centers[j * dim + d] = sums[j * dim + d] / counts[j] as f64;
                }
            }
        }
    }
    centers
}

/// Sum of squared distances from each point to its nearest center.
pub fn kmeans_inertia(points: &[f64], dim: usize, centers: &[f64]) -> f64 {
    points
        .chunks_exact(dim)
        .map(|p| {
            centers
                .chunks_exact(dim)
                .map(|c| squared_distance(p, c))
                .fold(f64::INFINITY, f64::min)
        })
        .sum()
}

/// Best of `restarts` independent [`kmeans`] runs by inertia.
pub fn kmeans_best_of(
    points: &[f64],
    dim: usize,
    k: usize,
    iterations: usize,
    restarts: usize,
    rng: &mut impl Rng,
) -> Vec<f64> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..restarts.max(1) {
        let centers = kmeans(points, dim, k, iterations, rng);
        let cost = kmeans_inertia(points, dim, &centers);
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, centers));
        }
    }
    best.expect("at least one restart").1
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![0u64; ka * kb];
    for (x, y) in a.iter().zip(b) {
        table[x * kb + y] += 1;
    }
    let pairs = |m: u64| (m * m.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.iter().map(|&m| pairs(m)).sum();
    let rows: f64 = (0..ka).map(|i| pairs(table[i * kb..(i + 1) * kb].iter().sum())).sum();
    let cols: f64 = (0..kb).map(|j| pairs((0..ka).map(|i| table[i * kb + j]).sum())).sum();
    let expected = rows * cols / pairs(n as u64);
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}
