//! Learned state locality.
//!
//! A dense network is trained contrastively on random-policy data so that
//! states one action apart land close in embedding space while random
//! state pairs are pushed to a target squared distance `beta`. Per record
//! `(s, s', negatives)` the loss is
//!
//! ```text
//! ||f(s) - f(s')||^2 + (beta - sum_j ||f(s) - f(neg_j)||^2)^2
//! ```
//!
//! summed over the minibatch. Once trained the embedding is frozen and its
//! induced L2 distance serves as the locality proxy for the replay buffer.
//! A handcrafted MountainCar distance is available as an alternative.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::env::{Episode, LocaEnv, MCState, Phase, ResetMode};
use crate::error::{CoreError, Result};
use crate::nn::{Activation, AdamParams, AdamState, BatchInput, DenseNet, NetSnapshot, Scalar};

/// One training record: indices into the dataset's observation pool.
#[derive(Clone, Debug)]
pub struct TripleRecord {
    pub anchor: u32,
    pub positive: u32,
    pub negatives: Box<[u32]>,
}

/// Random-policy dataset: an observation pool (one row per collected
/// state) plus records of (state, one-step successor, random negatives).
#[derive(Clone, Debug)]
pub struct TripleDataset {
    pub pool: Array2<f32>,
    pub records: Vec<TripleRecord>,
}

impl TripleDataset {
    pub fn obs_dim(&self) -> usize {
        self.pool.ncols()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Hyperparameters for embedding training.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingConfig {
    pub beta: f64,
    pub num_negatives: usize,
    pub minibatch: usize,
    pub epochs: usize,
    /// Environment steps of random-policy data collection.
    pub collect_steps: usize,
    /// Hidden widths followed by the embedding width.
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub lr: f64,
}

impl EmbeddingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) {
            return Err(CoreError::InvalidParam(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if self.num_negatives == 0 || self.minibatch == 0 || self.widths.is_empty() {
            return Err(CoreError::InvalidParam(
                "num_negatives, minibatch and widths must be nonempty/positive".into(),
            ));
        }
        Ok(())
    }
}

/// Collect a random-policy dataset. `steps` counts collected states; pairs
/// are consecutive states within an episode, so a single episode of k
/// collected states yields k - 1 records. Negatives are drawn uniformly
/// from the pool, rejecting any draw whose observation equals the record's
/// own state or successor.
pub fn collect_random_dataset<E: LocaEnv>(
    env: &E,
    steps: usize,
    num_negatives: usize,
    rng: &mut dyn RngCore,
) -> Result<TripleDataset> {
    if steps < 2 {
        return Err(CoreError::Dataset("need at least 2 collection steps".into()));
    }
    let mut pool = Array2::zeros((steps, env.obs_dim()));
    let mut pairs: Vec<(u32, u32)> = Vec::new();
    let mut episode = Episode::begin(env, ResetMode::TrainPhase1, rng);
    let mut prev: Option<u32> = None;
    for i in 0..steps {
        if episode.finished {
            episode = Episode::begin(env, ResetMode::TrainPhase1, rng);
            prev = None;
        }
        pool.row_mut(i).assign(&env.encode(episode.state));
        if let Some(p) = prev {
            pairs.push((p, i as u32));
        }
        prev = Some(i as u32);
        let action = rng.random_range(0..env.n_actions());
        episode.step(env, action, Phase::A);
    }

    let rows_equal = |a: u32, b: u32| pool.row(a as usize) == pool.row(b as usize);
    let mut records = Vec::with_capacity(pairs.len());
    for (anchor, positive) in pairs {
        let mut negatives = Vec::with_capacity(num_negatives);
        let mut tries = 0usize;
        while negatives.len() < num_negatives {
            let cand = rng.random_range(0..steps) as u32;
            if !rows_equal(cand, anchor) && !rows_equal(cand, positive) {
                negatives.push(cand);
            }
            tries += 1;
            if tries > 200 * num_negatives {
                return Err(CoreError::Dataset(
                    "could not draw negatives distinct from anchor/positive; \
                     pool has too few distinct observations"
                        .into(),
                ));
            }
        }
        records.push(TripleRecord {
            anchor,
            positive,
            negatives: negatives.into_boxed_slice(),
        });
    }
    Ok(TripleDataset { pool, records })
}

/// Loss and embedding-gradients for a batch laid out as consecutive groups
/// of `2 + num_negatives` rows (anchor, positive, negatives...). Returns
/// the loss summed over records and `dL/d(embedding rows)`.
pub fn contrastive_loss_grad<T: Scalar>(
    emb: &Array2<T>,
    num_negatives: usize,
    beta: T,
) -> (T, Array2<T>) {
    let group = 2 + num_negatives;
    assert_eq!(emb.nrows() % group, 0, "batch rows must form whole records");
    let records = emb.nrows() / group;
    let two = T::of_f64(2.0);
    let four = T::of_f64(4.0);
    let mut loss = T::zero();
    let mut grad = Array2::zeros(emb.raw_dim());
    for r in 0..records {
        let base = r * group;

        let mut pos_sq = T::zero();
        for k in 0..emb.ncols() {
            let d = emb[[base, k]] - emb[[base + 1, k]];
            pos_sq = pos_sq + d * d;
        }
        let mut neg_sq_sum = T::zero();
        for j in 0..num_negatives {
            for k in 0..emb.ncols() {
                let d = emb[[base, k]] - emb[[base + 2 + j, k]];
                neg_sq_sum = neg_sq_sum + d * d;
            }
        }
        let gap = beta - neg_sq_sum;
        loss = loss + pos_sq + gap * gap;

        for k in 0..emb.ncols() {
            let du_pos = two * (emb[[base, k]] - emb[[base + 1, k]]);
            grad[[base, k]] = grad[[base, k]] + du_pos;
            grad[[base + 1, k]] = grad[[base + 1, k]] - du_pos;
        }
        for j in 0..num_negatives {
            let row = base + 2 + j;
            for k in 0..emb.ncols() {
                let d = emb[[base, k]] - emb[[row, k]];
                grad[[base, k]] = grad[[base, k]] - four * gap * d;
                grad[[row, k]] = grad[[row, k]] + four * gap * d;
            }
        }
    }
    (loss, grad)
}

/// The loss of a single record, evaluated through an embedding function.
pub fn contrastive_loss(
    f: &EmbeddingFn,
    anchor: ArrayView1<f32>,
    positive: ArrayView1<f32>,
    negatives: ArrayView2<f32>,
    beta: f64,
) -> f64 {
    let u = f.embed(anchor);
    let p = f.embed(positive);
    let pos_sq: f64 = u
        .iter()
        .zip(p.iter())
        .map(|(a, b)| ((a - b) as f64).powi(2))
        .sum();
    let mut neg_sq_sum = 0.0;
    for row in negatives.rows() {
        let v = f.embed(row);
        neg_sq_sum += u
            .iter()
            .zip(v.iter())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>();
    }
    pos_sq + (beta - neg_sq_sum).powi(2)
}

/// A trained, frozen embedding function.
#[derive(Clone, Debug)]
pub struct EmbeddingFn {
    net: DenseNet<f32>,
    frozen: bool,
}

impl EmbeddingFn {
    pub fn from_net(net: DenseNet<f32>) -> Self {
        EmbeddingFn { net, frozen: true }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_width()
    }

    pub fn embedding_dim(&self) -> usize {
        self.net.output_width()
    }

    pub fn embed(&self, obs: ArrayView1<f32>) -> Array1<f32> {
        self.net.forward(obs)
    }

    pub fn embed_boxed(&self, obs: ArrayView1<f32>) -> Box<[f32]> {
        self.embed(obs).to_vec().into_boxed_slice()
    }

    /// Induced distance: L2 norm between embeddings.
    pub fn distance(&self, o1: ArrayView1<f32>, o2: ArrayView1<f32>) -> f64 {
        let a = self.embed(o1);
        let b = self.embed(o2);
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn params_hash(&self) -> u64 {
        self.net.params_hash()
    }
}

/// Snapshot of a trained embedding together with the config that built it.
#[derive(Serialize, Deserialize)]
pub struct EmbeddingSnapshot {
    pub config: EmbeddingConfig,
    pub net: NetSnapshot,
}

impl EmbeddingSnapshot {
    pub fn new(f: &EmbeddingFn, config: &EmbeddingConfig) -> Self {
        EmbeddingSnapshot {
            config: config.clone(),
            net: NetSnapshot::from_net(&f.net),
        }
    }

    pub fn embedding(&self) -> Result<EmbeddingFn> {
        Ok(EmbeddingFn::from_net(self.net.into_net()?))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Train the embedding by Adam on the summed contrastive loss over
/// shuffled minibatches for the configured number of epochs, then freeze.
pub fn train_embedding(
    dataset: &TripleDataset,
    config: &EmbeddingConfig,
    rng: &mut (impl Rng + ?Sized),
) -> Result<EmbeddingFn> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(CoreError::Dataset("dataset has no records".into()));
    }
    let mut widths = Vec::with_capacity(config.widths.len() + 1);
    widths.push(dataset.obs_dim());
    widths.extend_from_slice(&config.widths);
    let mut net = DenseNet::<f32>::new(&widths, config.activation, Activation::Identity, rng);
    let mut adam = AdamState::new(&net, AdamParams::with_lr(config.lr));

    let group = 2 + config.num_negatives;
    let mut order: Vec<usize> = (0..dataset.records.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(config.minibatch) {
            let mut batch = Array2::zeros((chunk.len() * group, dataset.obs_dim()));
            for (r, &rec_idx) in chunk.iter().enumerate() {
                let rec = &dataset.records[rec_idx];
                let base = r * group;
                batch
                    .row_mut(base)
                    .assign(&dataset.pool.row(rec.anchor as usize));
                batch
                    .row_mut(base + 1)
                    .assign(&dataset.pool.row(rec.positive as usize));
                for (j, &n) in rec.negatives.iter().enumerate() {
                    batch
                        .row_mut(base + 2 + j)
                        .assign(&dataset.pool.row(n as usize));
                }
            }
            let cache = net.forward_cached(BatchInput::Dense(batch.view()));
            let (loss, d_out) =
                contrastive_loss_grad(cache.output(), config.num_negatives, config.beta as f32);
            if !loss.is_finite() {
                return Err(CoreError::NonFinite {
                    quantity: "contrastive loss".into(),
                    context: format!("embedding training, epoch {epoch}"),
                });
            }
            let (grads, _) = net.backward_batch(&cache, &d_out);
            adam.apply(&mut net, &grads)?;
        }
    }
    Ok(EmbeddingFn::from_net(net))
}

/// Mean record loss of `f` over the given record indices.
pub fn dataset_loss(f: &EmbeddingFn, dataset: &TripleDataset, records: &[usize], beta: f64) -> f64 {
    let mut total = 0.0;
    for &i in records {
        let rec = &dataset.records[i];
        let rows: Vec<ArrayView1<f32>> = rec
            .negatives
            .iter()
            .map(|&n| dataset.pool.row(n as usize))
            .collect();
        let negs = ndarray::stack(Axis(0), &rows).expect("negative rows stack");
        total += contrastive_loss(
            f,
            dataset.pool.row(rec.anchor as usize),
            dataset.pool.row(rec.positive as usize),
            negs.view(),
            beta,
        );
    }
    total / records.len() as f64
}

/// Handcrafted MountainCar locality: velocities are rescaled so their
/// range matches the scale of the positions, then Euclidean distance
/// applies.
pub fn handcrafted_mc_distance(s1: MCState, s2: MCState) -> f64 {
    let dx = s1.position - s2.position;
    let dv = s1.velocity - s2.velocity;
    (dx * dx + 150.0 * dv * dv).sqrt()
}

/// Embedding form of the handcrafted distance: the L2 norm between these
/// vectors equals [`handcrafted_mc_distance`] up to f32 rounding.
pub fn handcrafted_mc_embedding(s: MCState) -> Box<[f32]> {
    vec![s.position as f32, (150.0f64.sqrt() * s.velocity) as f32].into_boxed_slice()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{GridEncoding, GridParams, MiniGrid, MountainCar};
    use crate::nn::{grad_check, GradCheckInput};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_embedding() -> EmbeddingFn {
        // Single linear layer, weight 1, bias 0: f(x) = x.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net =
            DenseNet::<f32>::new(&[1, 1], Activation::Identity, Activation::Identity, &mut rng);
        net.layers[0].weights[[0, 0]] = 1.0;
        net.layers[0].bias[0] = 0.0;
        EmbeddingFn::from_net(net)
    }

    #[test]
    fn constant_embedding_loss_is_beta_squared() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net =
            DenseNet::<f32>::new(&[2, 3], Activation::Identity, Activation::Identity, &mut rng);
        net.layers[0].weights.fill(0.0);
        net.layers[0].bias.fill(0.25);
        let f = EmbeddingFn::from_net(net);
        let negs = array![[0.3f32, 0.4], [0.5, 0.6], [0.9, 0.1]];
        let beta = 7.0;
        let loss = contrastive_loss(
            &f,
            array![0.1f32, 0.2].view(),
            array![0.7f32, 0.8].view(),
            negs.view(),
            beta,
        );
        assert!((loss - beta * beta).abs() < 1e-9);
    }

    #[test]
    fn identity_embedding_matches_formula_exactly() {
        let f = identity_embedding();
        // s = 0, s' = 0, negatives = {1}, beta = 1: 0 + (1 - 1)^2 = 0
        let loss = contrastive_loss(
            &f,
            array![0.0f32].view(),
            array![0.0f32].view(),
            array![[1.0f32]].view(),
            1.0,
        );
        assert_eq!(loss, 0.0);
        // s = 0, s' = 1, negatives = {2}, beta = 10: 1 + (10 - 4)^2 = 37
        let loss = contrastive_loss(
            &f,
            array![0.0f32].view(),
            array![1.0f32].view(),
            array![[2.0f32]].view(),
            10.0,
        );
        assert!((loss - 37.0).abs() < 1e-9);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        // Composite loss through a small f64 net; checks both loss terms.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net =
            DenseNet::<f64>::new(&[2, 6, 3], Activation::Tanh, Activation::Identity, &mut rng);
        let num_neg = 4;
        let records = 3;
        let rows = records * (2 + num_neg);
        let x = Array2::from_shape_fn((rows, 2), |_| rng.random_range(-1.0..1.0));
        let input = GradCheckInput::Dense(x);
        let report = grad_check(
            &mut net,
            &input,
            |out| contrastive_loss_grad(out, num_neg, 2.5),
            64,
            1e-5,
            1e-4,
            &mut rng,
        );
        assert!(
            report.passed(),
            "max rel err {} at {}",
            report.max_rel_err,
            report.worst
        );
    }

    #[test]
    fn collection_fencepost_two_steps_one_pair() {
        let env = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = collect_random_dataset(&env, 2, 0, &mut rng).unwrap();
        assert_eq!(ds.len(), 1);
    }

    #[test]
    fn pairs_never_straddle_episodes_and_negatives_are_distinct() {
        let env = MiniGrid {
            params: GridParams {
                episode_cap: 7,
                encoding: GridEncoding::OneHot,
                ..GridParams::default()
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = collect_random_dataset(&env, 400, 8, &mut rng).unwrap();
        // With a 7-step cap, 400 collected states split into >= 57 episodes,
        // so there must be strictly fewer pairs than steps - 1.
        assert!(ds.len() < 399);
        assert!(ds.len() >= 300);
        for rec in &ds.records {
            assert_eq!(rec.negatives.len(), 8);
            for &n in rec.negatives.iter() {
                assert_ne!(ds.pool.row(n as usize), ds.pool.row(rec.anchor as usize));
                assert_ne!(ds.pool.row(n as usize), ds.pool.row(rec.positive as usize));
            }
        }
    }

    #[test]
    fn random_collection_covers_position_extremes() {
        // Resets are uniform over the full box, so the pool must contain
        // normalized positions near both ends.
        let env = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = collect_random_dataset(&env, 20_000, 1, &mut rng).unwrap();
        let col = ds.pool.column(0);
        let min = col.iter().cloned().fold(f32::INFINITY, f32::min);
        let max = col.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(min < -0.95, "min {min}");
        assert!(max > 0.95, "max {max}");
    }

    #[test]
    fn zero_epochs_returns_initialization_unchanged() {
        let env = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = collect_random_dataset(&env, 100, 4, &mut rng).unwrap();
        let config = EmbeddingConfig {
            beta: 10.0,
            num_negatives: 4,
            minibatch: 8,
            epochs: 0,
            collect_steps: 100,
            widths: vec![8, 4],
            activation: Activation::Tanh,
            lr: 1e-3,
        };
        let mut rng_a = ChaCha8Rng::seed_from_u64(7);
        let trained = train_embedding(&ds, &config, &mut rng_a).unwrap();
        let mut rng_b = ChaCha8Rng::seed_from_u64(7);
        let init = DenseNet::<f32>::new(&[2, 8, 4], Activation::Tanh, Activation::Identity, &mut rng_b);
        assert_eq!(trained.params_hash(), EmbeddingFn::from_net(init).params_hash());
    }

    #[test]
    fn training_reduces_loss_on_a_fixed_batch() {
        let env = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ds = collect_random_dataset(&env, 2000, 8, &mut rng).unwrap();
        let config = EmbeddingConfig {
            beta: 10.0,
            num_negatives: 8,
            minibatch: 32,
            epochs: 2,
            collect_steps: 2000,
            widths: vec![16, 16, 8],
            activation: Activation::Tanh,
            lr: 1e-3,
        };
        let probe: Vec<usize> = (0..200).collect();
        let mut rng_init = ChaCha8Rng::seed_from_u64(9);
        let init_net =
            DenseNet::<f32>::new(&[2, 16, 16, 8], Activation::Tanh, Activation::Identity, &mut rng_init);
        let before = dataset_loss(&EmbeddingFn::from_net(init_net), &ds, &probe, config.beta);
        let mut rng_train = ChaCha8Rng::seed_from_u64(9);
        let trained = train_embedding(&ds, &config, &mut rng_train).unwrap();
        let after = dataset_loss(&trained, &ds, &probe, config.beta);
        assert!(after < before, "loss went {before} -> {after}");
    }

    #[test]
    fn one_step_pairs_are_closer_than_random_pairs() {
        // Small-budget version of the separation property.
        let env = MountainCar::default();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let ds = collect_random_dataset(&env, 4000, 8, &mut rng).unwrap();
        let config = EmbeddingConfig {
            beta: 10.0,
            num_negatives: 8,
            minibatch: 32,
            epochs: 3,
            collect_steps: 4000,
            widths: vec![32, 32, 8],
            activation: Activation::Tanh,
            lr: 1e-3,
        };
        let f = train_embedding(&ds, &config, &mut rng).unwrap();
        let mut adjacent = 0.0;
        let mut random = 0.0;
        let n = 1000.min(ds.len());
        for i in 0..n {
            let rec = &ds.records[i];
            adjacent += f.distance(
                ds.pool.row(rec.anchor as usize),
                ds.pool.row(rec.positive as usize),
            );
            let a = rng.random_range(0..ds.pool.nrows());
            let b = rng.random_range(0..ds.pool.nrows());
            random += f.distance(ds.pool.row(a), ds.pool.row(b));
        }
        let (mean_adjacent, mean_random) = (adjacent / n as f64, random / n as f64);
        assert!(
            mean_adjacent < mean_random,
            "adjacent {mean_adjacent} random {mean_random}"
        );
    }

    #[test]
    fn distance_is_a_pseudometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = DenseNet::<f32>::new(&[3, 8, 4], Activation::Tanh, Activation::Identity, &mut rng);
        let f = EmbeddingFn::from_net(net);
        for _ in 0..200 {
            let mut v = || {
                Array1::from_shape_fn(3, |_| rng.random_range(-1.0..1.0f32))
            };
            let (a, b, c) = (v(), v(), v());
            let dab = f.distance(a.view(), b.view());
            let dba = f.distance(b.view(), a.view());
            let dac = f.distance(a.view(), c.view());
            let dcb = f.distance(c.view(), b.view());
            assert_eq!(f.distance(a.view(), a.view()), 0.0);
            assert!(dab >= 0.0);
            assert!((dab - dba).abs() < 1e-12);
            assert!(dab <= dac + dcb + 1e-6);
        }
    }

    #[test]
    fn handcrafted_distance_matches_closed_forms() {
        let z = MCState::new(0.0, 0.0);
        assert_eq!(handcrafted_mc_distance(z, z), 0.0);
        assert!((handcrafted_mc_distance(z, MCState::new(0.5, 0.0)) - 0.5).abs() < 1e-12);
        let expected = (150.0f64).sqrt() * 0.07;
        assert!(
            (handcrafted_mc_distance(z, MCState::new(0.0, 0.07)) - expected).abs() < 1e-12
        );
    }

    #[test]
    fn handcrafted_embedding_reproduces_the_distance() {
        let a = MCState::new(-0.3, 0.02);
        let b = MCState::new(0.1, -0.05);
        let ea = handcrafted_mc_embedding(a);
        let eb = handcrafted_mc_embedding(b);
        let d: f64 = ea
            .iter()
            .zip(eb.iter())
            .map(|(x, y)| ((x - y) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!((d - handcrafted_mc_distance(a, b)).abs() < 1e-6);
    }

    #[test]
    fn snapshot_roundtrip_preserves_embedding() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = DenseNet::<f32>::new(&[2, 8, 4], Activation::Tanh, Activation::Identity, &mut rng);
        let f = EmbeddingFn::from_net(net);
        let config = EmbeddingConfig {
            beta: 10.0,
            num_negatives: 128,
            minibatch: 32,
            epochs: 5,
            collect_steps: 1000,
            widths: vec![8, 4],
            activation: Activation::Tanh,
            lr: 1e-4,
        };
        let snap = EmbeddingSnapshot::new(&f, &config);
        let parsed: EmbeddingSnapshot = serde_json::from_str(&snap.to_json()).unwrap();
        let restored = parsed.embedding().unwrap();
        assert_eq!(f.params_hash(), restored.params_hash());
        assert!(restored.is_frozen());
    }
}
