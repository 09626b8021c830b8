//! The full network: configuration, the flat parameter arena, and the
//! per-sample forward and backward passes.
//!
//! All learnable values live in one `Vec<f64>`. A [`Layout`] names the
//! blocks of that vector and tags each with a [`ParamClass`], so the
//! optimizer, gradient checks and checkpoints all work on plain slices.

use std::f64::consts::LN_2;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adaptive_clustering::{
    clustering_loss_backward, inject_backward, inject_row, soft_assign_row, Centers, Injection,
};
use crate::cascade_data::{log2_1p, PredictionSample};
use crate::cascade_embedding::{
    encoding_dim, log_spaced_frequencies, AdopterInput, Attention, AttentionGrads, EncoderGrads,
    SnapshotEncoder, SnapshotTrace,
};
use crate::heads::{
    physics_increment, physics_increment_backward, physics_reconstruct, physics_reconstruct_backward,
    PhysicsGrads, PhysicsHead, PhysicsTrace, PredictionGrads, PredictionHead, PredictionTrace,
};
use crate::linalg::softplus;
use crate::richards::{fit_richards, initial_guess, FitConfig, RichardsParams};
use crate::temporal_learning::{
    receptive_field, GatedLayer, GatedLayerGrads, TemporalGrads, TemporalStack, TemporalTrace,
};
use crate::{Error, Result};

/// Architecture settings. Everything here is part of the checkpoint
/// compatibility hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub heads: usize,
    pub user_dim: usize,
    /// Number of learnable time-encoding frequencies.
    pub time_frequencies: usize,
    pub tcn_layers: usize,
    pub kernel_size: usize,
    pub max_clusters: usize,
    /// Student-t degrees of freedom.
    pub dof: f64,
    pub injection: Injection,
    /// When false the clustering network is bypassed: `Z_p = Z_h`.
    pub clustering: bool,
    /// Only the earliest adopters of each snapshot are attended over.
    pub max_adopters_per_snapshot: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            heads: 4,
            user_dim: 16,
            time_frequencies: 4,
            tcn_layers: 3,
            kernel_size: 2,
            max_clusters: 5,
            dof: 1.0,
            injection: Injection::Hard,
            clustering: true,
            max_adopters_per_snapshot: 32,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("heads", self.heads),
            ("user_dim", self.user_dim),
            ("tcn_layers", self.tcn_layers),
            ("kernel_size", self.kernel_size),
            ("max_clusters", self.max_clusters),
            ("max_adopters_per_snapshot", self.max_adopters_per_snapshot),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Argument(format!("{name} must be positive")));
            }
        }
        if self.hidden_dim % self.heads != 0 {
            return Err(Error::Argument(format!(
                "hidden_dim {} is not divisible by {} heads",
                self.hidden_dim, self.heads
            )));
        }
        if !(self.dof > 0.0) {
            return Err(Error::Argument(format!("dof must be positive, got {}", self.dof)));
        }
        Ok(())
    }

    pub fn attention_input_dim(&self) -> usize {
        self.user_dim + encoding_dim(self.time_frequencies)
    }

    pub fn receptive_field(&self) -> usize {
        receptive_field(self.kernel_size, self.tcn_layers)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamClass {
    TimeFrequency,
    UserEmbedding,
    Attention,
    TemporalConv,
    TemporalAffine,
    ClusterCenters,
    PredictionHead,
    PhysicsHead,
}

impl ParamClass {
    pub const ALL: [ParamClass; 8] = [
        ParamClass::TimeFrequency,
        ParamClass::UserEmbedding,
        ParamClass::Attention,
        ParamClass::TemporalConv,
        ParamClass::TemporalAffine,
        ParamClass::ClusterCenters,
        ParamClass::PredictionHead,
        ParamClass::PhysicsHead,
    ];
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub class: ParamClass,
    pub range: Range<usize>,
    /// Fan-in used for initialization; zero for blocks that start at zero.
    pub fan_in: usize,
}

/// Named blocks of the parameter arena, in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub blocks: Vec<Block>,
    pub total: usize,
}

impl Layout {
    pub fn new(cfg: &ModelConfig, user_rows: usize) -> Self {
        let h = cfg.hidden_dim;
        let d_in = cfg.attention_input_dim();
        let mut blocks = Vec::new();
        let mut total = 0;
        let mut add = |name: String, class, len: usize, fan_in| {
            blocks.push(Block {
                name,
                class,
                range: total..total + len,
                fan_in,
            });
            total += len;
        };
        use ParamClass::*;
        add("omegas".into(), TimeFrequency, cfg.time_frequencies, 0);
        add("users".into(), UserEmbedding, user_rows * cfg.user_dim, 1);
        for name in ["w_q", "w_k", "w_v"] {
            add(name.into(), Attention, d_in * h, d_in);
        }
        add("w_in".into(), TemporalAffine, (h + 1) * h, h + 1);
        add("b_in".into(), TemporalAffine, h, 0);
        for k in 0..cfg.tcn_layers {
            add(format!("filter_{k}"), TemporalConv, cfg.kernel_size * h * h, cfg.kernel_size * h);
            add(format!("gate_{k}"), TemporalConv, cfg.kernel_size * h * h, cfg.kernel_size * h);
            add(format!("skip_{k}"), TemporalAffine, h * h, h);
        }
        add("w_out".into(), TemporalAffine, h * h, h);
        add("b_out".into(), TemporalAffine, h, 0);
        add("centers".into(), ClusterCenters, cfg.max_clusters * h, 0);
        add("pred_w1".into(), PredictionHead, h * h, h);
        add("pred_b1".into(), PredictionHead, h, 0);
        add("pred_w2".into(), PredictionHead, h, h);
        add("pred_b2".into(), PredictionHead, 1, 0);
        add("phys_w".into(), PhysicsHead, 4 * h, h);
        add("phys_b".into(), PhysicsHead, 4, 0);
        Self { blocks, total }
    }

    pub fn block(&self, name: &str) -> &Block {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .unwrap_or_else(|| panic!("no parameter block named {name}"))
    }

    pub fn range(&self, name: &str) -> Range<usize> {
        self.block(name).range.clone()
    }

    pub fn class_ranges(&self, class: ParamClass) -> impl Iterator<Item = Range<usize>> + '_ {
        self.blocks
            .iter()
            .filter(move |b| b.class == class)
            .map(|b| b.range.clone())
    }
}

/// Sorted user ids seen in training; one extra row is shared by every
/// unseen user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    users: Vec<String>,
}

impl Vocab {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a PredictionSample>) -> Self {
        Self::from_users(
            samples
                .into_iter()
                .flat_map(|s| s.series.snapshots.iter())
                .flat_map(|snap| snap.adopters.iter().map(|a| a.user.clone())),
        )
    }

    pub fn from_users(users: impl IntoIterator<Item = String>) -> Self {
        let mut users: Vec<String> = users.into_iter().collect();
        users.sort_unstable();
        users.dedup();
        Self { users }
    }

    pub fn unknown_row(&self) -> usize {
        self.users.len()
    }

    pub fn rows(&self) -> usize {
        self.users.len() + 1
    }

    pub fn row(&self, user: &str) -> usize {
        self.users
            .binary_search_by(|u| u.as_str().cmp(user))
            .unwrap_or(self.unknown_row())
    }
}

/// Fixed affine maps that put the heads' outputs on the data's scale.
/// `Y_pred = label_mean + label_scale · head(Z_p)` and each Richards
/// parameter is `physics_scale[k] · softplus(affine_k + physics_offset[k])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputScaling {
    pub label_mean: f64,
    pub label_scale: f64,
    pub physics_scale: [f64; 4],
    pub physics_offset: [f64; 4],
}

impl OutputScaling {
    pub fn identity() -> Self {
        Self {
            label_mean: 0.0,
            label_scale: 1.0,
            physics_scale: [1.0; 4],
            physics_offset: [0.0; 4],
        }
    }

    /// Label mean and spread, and a reference Richards curve fitted to the
    /// geometric-mean trajectory of the training samples, chosen so that a
    /// zero affine output reproduces the reference parameters.
    pub fn from_training(samples: &[PredictionSample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Argument("cannot derive output scaling from no samples".into()));
        }
        let n = samples.len() as f64;
        let label_mean = samples.iter().map(|s| s.label).sum::<f64>() / n;
        let var = samples.iter().map(|s| (s.label - label_mean).powi(2)).sum::<f64>() / n;
        let label_scale = var.sqrt().max(0.1);

        let steps = samples.iter().map(|s| s.series.len()).min().unwrap_or(0);
        let mut points = Vec::with_capacity(steps + 1);
        for t in 0..steps {
            let m = samples
                .iter()
                .map(|s| log2_1p(s.series.snapshots[t].cumulative as f64))
                .sum::<f64>()
                / n;
            points.push(((t + 1) as f64, m.exp2() - 1.0));
        }
        let horizon = samples.iter().map(|s| s.horizon_steps()).sum::<f64>() / n;
        let m = samples.iter().map(|s| log2_1p(s.final_popularity as f64)).sum::<f64>() / n;
        let final_level = m.exp2() - 1.0;
        points.push((horizon, final_level));

        let reference = fit_richards(&points, None, &FitConfig::default())
            .ok()
            .map(|r| r.params)
            .filter(|p| p.to_array().iter().all(|x| x.is_finite() && *x > 0.0))
            .unwrap_or_else(|| {
                let g = initial_guess(&points);
                RichardsParams::from_array(g.to_array().map(|x| if x.is_finite() && x > 0.0 { x } else { 1.0 }))
            });
        let mut physics_scale = reference.to_array().map(|x| x / LN_2);
        let mut physics_offset = [0.0; 4];
        // the final level is a direct observation; the fit may overshoot it
        let alpha_ref = reference.alpha.min(4.0 * final_level.max(1.0));
        // α spans orders of magnitude across cascades, so its Softplus is
        // run in the exponential regime: the scale sits at twice the largest
        // final popularity and the offset brings a zero output back to the
        // reference
        let largest = samples.iter().map(|s| s.final_popularity).max().unwrap_or(1).max(1) as f64;
        let alpha_scale = (2.0 * largest).max(alpha_ref / LN_2);
        physics_scale[0] = alpha_scale;
        physics_offset[0] = inverse_softplus(alpha_ref / alpha_scale);
        Ok(Self {
            label_mean,
            label_scale,
            physics_scale,
            physics_offset,
        })
    }

    /// Parameters a zero affine output maps to.
    pub fn reference(&self) -> RichardsParams {
        let p: [f64; 4] = std::array::from_fn(|k| self.physics_scale[k] * softplus(self.physics_offset[k]));
        RichardsParams::from_array(p)
    }
}

fn inverse_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// A sample converted to model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub cascade_id: String,
    pub snapshots: Vec<Vec<AdopterInput>>,
    /// Raw cumulative popularity at the end of each snapshot.
    pub popularity: Vec<f64>,
    /// `log2(1 + cumulative)` per snapshot.
    pub snapshot_labels: Vec<f64>,
    /// Snapshot indices `1..=T`.
    pub times: Vec<f64>,
    pub horizon_step: f64,
    pub observed: f64,
    pub label: f64,
    pub final_popularity: f64,
}

/// Read-only view of every sub-network over one parameter vector.
pub struct Network<'a> {
    pub config: &'a ModelConfig,
    pub scaling: &'a OutputScaling,
    pub encoder: SnapshotEncoder<'a>,
    pub temporal: TemporalStack<'a>,
    pub centers: Centers<'a>,
    pub prediction: PredictionHead<'a>,
    pub physics: PhysicsHead<'a>,
}

/// Mutable gradient views in the same layout.
pub struct NetworkGrads<'a> {
    pub encoder: EncoderGrads<'a>,
    pub temporal: TemporalGrads<'a>,
    pub centers: &'a mut [f64],
    pub prediction: PredictionGrads<'a>,
    pub physics: PhysicsGrads<'a>,
}

fn carve<'a>(rest: &mut &'a mut [f64], len: usize) -> &'a mut [f64] {
    let (head, tail) = std::mem::take(rest).split_at_mut(len);
    *rest = tail;
    head
}

impl<'a> NetworkGrads<'a> {
    /// Splits `grads` following [`Layout::new`]'s block order.
    pub fn new(cfg: &ModelConfig, layout: &Layout, grads: &'a mut [f64]) -> Self {
        assert_eq!(grads.len(), layout.total, "gradient buffer does not match layout");
        let mut blocks = layout.blocks.iter().map(|b| b.range.len());
        let mut rest = grads;
        let mut next = || carve(&mut rest, blocks.next().expect("layout block"));
        let omegas = next();
        let user_table = next();
        let (w_q, w_k, w_v) = (next(), next(), next());
        let (w_in, b_in) = (next(), next());
        let mut layers = Vec::with_capacity(cfg.tcn_layers);
        for _ in 0..cfg.tcn_layers {
            let (filter, gate, skip) = (next(), next(), next());
            layers.push(GatedLayerGrads { filter, gate, skip });
        }
        let (w_out, b_out) = (next(), next());
        let centers = next();
        let (w1, b1, w2, b2) = (next(), next(), next(), next());
        let (w, b) = (next(), next());
        Self {
            encoder: EncoderGrads {
                user_table,
                omegas,
                attention: AttentionGrads { w_q, w_k, w_v },
            },
            temporal: TemporalGrads {
                w_in,
                b_in,
                layers,
                w_out,
                b_out,
            },
            centers,
            prediction: PredictionGrads { w1, b1, w2, b2 },
            physics: PhysicsGrads { w, b },
        }
    }
}

/// Everything the backward pass needs from one forward pass.
#[derive(Debug, Clone)]
pub struct SampleTrace {
    pub snapshots: Vec<SnapshotTrace>,
    pub temporal: TemporalTrace,
    pub q: Vec<f64>,
    pub dist: Vec<f64>,
    pub z_p: Vec<f64>,
    pub prediction: PredictionTrace,
    pub y_pred: f64,
    pub physics: PhysicsTrace,
    pub reconstruction: Vec<f64>,
    pub y_phy: f64,
}

impl SampleTrace {
    pub fn z_h(&self) -> &[f64] {
        &self.temporal.output
    }

    pub fn cluster(&self) -> usize {
        crate::linalg::argmax(&self.q)
    }
}

/// Upstream gradients of the loss with respect to the network outputs.
#[derive(Debug, Clone, Default)]
pub struct Upstream<'p> {
    pub y_pred: f64,
    pub reconstruction: Vec<f64>,
    pub y_phy: f64,
    /// Frozen target row and the weight of this sample's KL term.
    pub clustering: Option<(&'p [f64], f64)>,
}

impl<'a> Network<'a> {
    pub fn new(cfg: &'a ModelConfig, layout: &Layout, scaling: &'a OutputScaling, params: &'a [f64]) -> Result<Self> {
        if params.len() != layout.total {
            return Err(Error::Shape(format!(
                "{} parameters for a layout of {}",
                params.len(),
                layout.total
            )));
        }
        let h = cfg.hidden_dim;
        let get = |name: &str| &params[layout.range(name)];
        let attention = Attention::new(cfg.attention_input_dim(), h, cfg.heads, get("w_q"), get("w_k"), get("w_v"))?;
        let layers = (0..cfg.tcn_layers)
            .map(|k| GatedLayer {
                filter: get(&format!("filter_{k}")),
                gate: get(&format!("gate_{k}")),
                skip: get(&format!("skip_{k}")),
                dilation: 1 << k,
            })
            .collect();
        Ok(Self {
            config: cfg,
            scaling,
            encoder: SnapshotEncoder {
                user_table: get("users"),
                user_dim: cfg.user_dim,
                omegas: get("omegas"),
                attention,
            },
            temporal: TemporalStack {
                input_dim: h + 1,
                hidden: h,
                w_in: get("w_in"),
                b_in: get("b_in"),
                layers,
                w_out: get("w_out"),
                b_out: get("b_out"),
            },
            centers: Centers {
                data: get("centers"),
                dim: h,
                dof: cfg.dof,
            },
            prediction: PredictionHead {
                hidden: h,
                w1: get("pred_w1"),
                b1: get("pred_b1"),
                w2: get("pred_w2"),
                b2: get("pred_b2"),
            },
            physics: PhysicsHead {
                hidden: h,
                w: get("phys_w"),
                b: get("phys_b"),
                scale: scaling.physics_scale,
                offset: scaling.physics_offset,
            },
        })
    }

    /// Embedding and temporal stages only; returns `Z_h`'s trace pieces.
    pub fn encode(&self, prep: &Prepared) -> Result<(Vec<SnapshotTrace>, TemporalTrace)> {
        let h = self.config.hidden_dim;
        let mut snapshots = Vec::with_capacity(prep.snapshots.len());
        let mut embeddings = Vec::with_capacity(prep.snapshots.len() * h);
        for adopters in &prep.snapshots {
            let tr = self.encoder.embed_snapshot(adopters)?;
            embeddings.extend_from_slice(&tr.pooled);
            snapshots.push(tr);
        }
        let temporal = self.temporal.forward(&embeddings, &prep.popularity)?;
        Ok((snapshots, temporal))
    }

    pub fn forward(&self, prep: &Prepared) -> Result<SampleTrace> {
        let (snapshots, temporal) = self.encode(prep)?;
        let z_h = &temporal.output;
        let c = self.centers.clusters();
        let mut q = vec![0.0; c];
        let mut dist = vec![0.0; c];
        soft_assign_row(z_h, &self.centers, &mut q, &mut dist);
        let mut z_p = vec![0.0; z_h.len()];
        if self.config.clustering {
            inject_row(z_h, &q, &self.centers, self.config.injection, &mut z_p);
        } else {
            z_p.copy_from_slice(z_h);
        }
        let prediction = self.prediction.forward(&z_p)?;
        let y_pred = self.scaling.label_mean + self.scaling.label_scale * prediction.output;
        let physics = self.physics.forward(&z_p)?;
        let reconstruction = physics_reconstruct(&physics.params, &prep.times);
        let y_phy = physics_increment(&physics.params, prep.horizon_step, prep.observed);
        Ok(SampleTrace {
            snapshots,
            temporal,
            q,
            dist,
            z_p,
            prediction,
            y_pred,
            physics,
            reconstruction,
            y_phy,
        })
    }

    pub fn backward(&self, prep: &Prepared, trace: &SampleTrace, up: &Upstream<'_>, grads: &mut NetworkGrads<'_>) {
        let h = self.config.hidden_dim;
        let mut dz_p = vec![0.0; h];
        if up.y_pred != 0.0 {
            self.prediction.backward(
                &trace.z_p,
                &trace.prediction,
                up.y_pred * self.scaling.label_scale,
                &mut grads.prediction,
                &mut dz_p,
            );
        }
        let physics_active = up.y_phy != 0.0 || up.reconstruction.iter().any(|g| *g != 0.0);
        if physics_active {
            let params = &trace.physics.params;
            let mut dp = if up.reconstruction.is_empty() {
                [0.0; 4]
            } else {
                physics_reconstruct_backward(params, &prep.times, &up.reconstruction)
            };
            if up.y_phy != 0.0 {
                let di = physics_increment_backward(params, prep.horizon_step, prep.observed);
                for k in 0..4 {
                    dp[k] += up.y_phy * di[k];
                }
            }
            self.physics
                .backward(&trace.z_p, &trace.physics, dp, &mut grads.physics, &mut dz_p);
        }

        let z_h = trace.z_h();
        let mut dz_h = vec![0.0; h];
        if self.config.clustering {
            inject_backward(
                &dz_p,
                z_h,
                &trace.q,
                &trace.dist,
                &self.centers,
                self.config.injection,
                &mut dz_h,
                grads.centers,
            );
        } else {
            dz_h.copy_from_slice(&dz_p);
        }
        if let Some((p, scale)) = up.clustering {
            if scale != 0.0 {
                clustering_loss_backward(p, &trace.q, &trace.dist, z_h, &self.centers, scale, &mut dz_h, grads.centers);
            }
        }

        let d_emb = self.temporal.backward(&trace.temporal, &dz_h, &mut grads.temporal);
        for (t, snap) in trace.snapshots.iter().enumerate() {
            self.encoder
                .backward(snap, &d_emb[t * h..(t + 1) * h], &mut grads.encoder);
        }
    }
}

/// Learnable parameters plus everything needed to feed the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub scaling: OutputScaling,
    pub params: Vec<f64>,
}

impl ModelState {
    /// Seeded initialization: weights uniform in `±1/√fan_in`, biases and
    /// cluster centers zero, user embeddings uniform in `±1`, frequencies
    /// log-spaced between one cycle per window and one per snapshot.
    pub fn init(config: ModelConfig, vocab: Vocab, scaling: OutputScaling, observable_steps: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if observable_steps == 0 {
            return Err(Error::Argument("need at least one snapshot".into()));
        }
        if config.receptive_field() < observable_steps {
            return Err(Error::Argument(format!(
                "receptive field {} does not cover {observable_steps} snapshots",
                config.receptive_field()
            )));
        }
        let layout = Layout::new(&config, vocab.rows());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![0.0; layout.total];
        for block in &layout.blocks {
            let slot = &mut params[block.range.clone()];
            match block.class {
                ParamClass::TimeFrequency => {
                    slot.copy_from_slice(&log_spaced_frequencies(slot.len(), observable_steps as f64, 1.0))
                }
                _ if block.fan_in == 0 => {}
                _ => {
                    let bound = 1.0 / (block.fan_in as f64).sqrt();
                    slot.iter_mut().for_each(|v| *v = rng.gen_range(-bound..bound));
                }
            }
        }
        Ok(Self {
            config,
            vocab,
            scaling,
            params,
        })
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.config, self.vocab.rows())
    }

    pub fn network<'s>(&'s self, layout: &Layout) -> Result<Network<'s>> {
        Network::new(&self.config, layout, &self.scaling, &self.params)
    }

    pub fn prepare(&self, sample: &PredictionSample) -> Prepared {
        let series = &sample.series;
        let len = series.snapshot_length;
        let cap = self.config.max_adopters_per_snapshot;
        let snapshots = series
            .snapshots
            .iter()
            .map(|s| {
                s.adopters
                    .iter()
                    .take(cap)
                    .map(|a| AdopterInput {
                        user_row: self.vocab.row(&a.user),
                        gap: a.gap / len,
                    })
                    .collect()
            })
            .collect();
        let popularity: Vec<f64> = series.cumulative().map(|c| c as f64).collect();
        Prepared {
            cascade_id: sample.cascade_id.clone(),
            snapshots,
            snapshot_labels: popularity.iter().map(|p| log2_1p(*p)).collect(),
            times: (1..=popularity.len()).map(|t| t as f64).collect(),
            popularity,
            horizon_step: sample.horizon_steps(),
            observed: sample.observed_popularity as f64,
            label: sample.label,
            final_popularity: sample.final_popularity as f64,
        }
    }
}
