#![allow(dead_code)]

use piacn::cascade_data::{
    generate_synthetic_corpus, make_sample, snapshot_series, split_corpus, CorpusSplit, ParamRange, PredictionSample,
    SyntheticSpec,
};

/// A small well-separated corpus: five α clusters, narrow shape ranges.
pub fn separated_spec(per_cluster: usize, window_snapshots: f64) -> SyntheticSpec {
    let mut spec = SyntheticSpec::default();
    spec.cascades_per_cluster = per_cluster;
    spec.observable_window = window_snapshots * spec.time_unit;
    for (c, a) in spec.clusters.iter_mut().zip([12.0, 36.0, 108.0, 324.0, 972.0]) {
        c.alpha = ParamRange(a, a * 4.0 / 3.0);
        c.beta = ParamRange(5.0, 5.2);
        c.gamma = ParamRange(0.65, 0.7);
        c.delta = ParamRange(0.95, 1.05);
    }
    spec
}

pub fn samples(spec: &SyntheticSpec, seed: u64) -> Vec<PredictionSample> {
    let corpus = generate_synthetic_corpus(spec, seed).unwrap();
    let truth = corpus.truth_by_id();
    corpus
        .cascades
        .iter()
        .map(|c| {
            let s = snapshot_series(c, spec.time_unit, spec.observable_window).unwrap();
            make_sample(c, s, spec.horizon).unwrap().with_ground_truth(truth[&c.id].clone())
        })
        .collect()
}

pub fn split(spec: &SyntheticSpec, seed: u64) -> CorpusSplit {
    split_corpus(samples(spec, seed), seed).unwrap()
}

pub mod gradcheck {
    use std::collections::BTreeMap;

    use piacn::adaptive_clustering::{target_distribution, Injection};
    use piacn::cascade_data::{ParamRange, SyntheticSpec};
    use piacn::model::{ModelConfig, ModelState, OutputScaling, ParamClass, Prepared, Vocab};
    use piacn::training_eval::{assignments, term_gradient, TermWeights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const TERMS: [(&str, TermWeights); 4] = [
        ("l_pred", TermWeights { pred: 1.0, rc: 0.0, pc: 0.0, clu: 0.0 }),
        ("l_rc", TermWeights { pred: 0.0, rc: 1.0, pc: 0.0, clu: 0.0 }),
        ("l_pc", TermWeights { pred: 0.0, rc: 0.0, pc: 1.0, clu: 0.0 }),
        ("l_clu", TermWeights { pred: 0.0, rc: 0.0, pc: 0.0, clu: 1.0 }),
    ];

    pub struct Instance {
        pub state: ModelState,
        pub preps: Vec<Prepared>,
        pub targets: Vec<f64>,
        pub clusters: usize,
    }

    /// hidden 4, 2 snapshots, 2 clusters, 3 samples.
    pub fn micro_instance(seed: u64, injection: Injection) -> Instance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut spec = SyntheticSpec::default();
        spec.observable_window = 2.0 * spec.time_unit;
        spec.horizon = 4.0 * spec.time_unit;
        spec.user_pool = 40;
        spec.cascades_per_cluster = 1;
        spec.clusters.truncate(3);
        for c in &mut spec.clusters {
            c.alpha = ParamRange(4.0, 14.0);
            c.beta = ParamRange(0.5, 2.0);
            c.gamma = ParamRange(0.5, 1.5);
            c.delta = ParamRange(0.5, 2.0);
        }
        let samples = super::samples(&spec, seed);
        let config = ModelConfig {
            hidden_dim: 4,
            heads: 2,
            user_dim: 3,
            time_frequencies: 2,
            tcn_layers: 1,
            kernel_size: 2,
            max_clusters: 2,
            dof: rng.gen_range(0.5..2.0),
            injection,
            clustering: true,
            max_adopters_per_snapshot: 4,
        };
        let vocab = Vocab::from_samples(&samples);
        let scaling = OutputScaling::from_training(&samples).unwrap();
        let mut state = ModelState::init(config, vocab, scaling, 2, seed).unwrap();
        // move every parameter off its initial special value (zero biases,
        // zero centers) so no term is trivially zero
        for v in state.params.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
        let layout = state.layout();
        for v in &mut state.params[layout.range("centers")] {
            *v = rng.gen_range(-2.0..2.0);
        }
        let preps: Vec<Prepared> = samples.iter().map(|s| state.prepare(s)).collect();
        let q = assignments(&state, &preps).unwrap();
        let targets = target_distribution(&q, 2);
        Instance {
            state,
            preps,
            targets,
            clusters: 2,
        }
    }

    impl Instance {
        fn value(&self, state: &ModelState, terms: &TermWeights) -> f64 {
            let refs: Vec<&Prepared> = self.preps.iter().collect();
            let rows = self.rows();
            let (parts, _) = term_gradient(state, &refs, &rows, terms, false).unwrap();
            terms.combine(&parts)
        }

        fn rows(&self) -> Vec<Option<&[f64]>> {
            (0..self.preps.len())
                .map(|i| Some(&self.targets[i * self.clusters..(i + 1) * self.clusters]))
                .collect()
        }

        pub fn analytic(&self, terms: &TermWeights) -> Vec<f64> {
            let refs: Vec<&Prepared> = self.preps.iter().collect();
            term_gradient(&self.state, &refs, &self.rows(), terms, true).unwrap().1
        }

        /// Smallest distance of any non-differentiable argument from its kink:
        /// absolute-value residuals, rectifier inputs, the increment clamp and
        /// the hard-assignment margin.
        pub fn kink_margin(&self) -> f64 {
            let layout = self.state.layout();
            let net = self.state.network(&layout).unwrap();
            let mut margin = f64::INFINITY;
            for p in &self.preps {
                let tr = net.forward(p).unwrap();
                margin = margin.min((tr.y_pred - p.label).abs());
                margin = margin.min((tr.y_pred - tr.y_phy).abs());
                for (r, y) in tr.reconstruction.iter().zip(&p.snapshot_labels) {
                    margin = margin.min((r - y).abs());
                }
                let h = self.state.config.hidden_dim;
                let mut pre = net.prediction.b1.to_vec();
                piacn::linalg::vec_mat_acc(&tr.z_p, net.prediction.w1, h, &mut pre);
                for a in pre {
                    margin = margin.min(a.abs());
                }
                margin = margin.min((tr.physics.params.eval(p.horizon_step) - p.observed).abs());
                let mut q = tr.q.clone();
                q.sort_by(|a, b| b.total_cmp(a));
                margin = margin.min(q[0] - q[1]);
            }
            margin
        }
    }

    /// Worst relative error per parameter class for one term.
    pub fn check_term(inst: &Instance, terms: &TermWeights, step: f64, floor: f64) -> BTreeMap<ParamClass, f64> {
        let layout = inst.state.layout();
        let analytic = inst.analytic(terms);
        let mut worst = BTreeMap::new();
        for block in &layout.blocks {
            let entry = worst.entry(block.class).or_insert(0.0f64);
            for k in block.range.clone() {
                let mut up = inst.state.clone();
                let mut dn = inst.state.clone();
                up.params[k] += step;
                dn.params[k] -= step;
                let fd = (inst.value(&up, terms) - inst.value(&dn, terms)) / (2.0 * step);
                let scale = analytic[k].abs().max(fd.abs()).max(floor);
                *entry = entry.max((analytic[k] - fd).abs() / scale);
            }
        }
        worst
    }
}
