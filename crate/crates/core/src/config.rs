//! Experiment configuration schema, presets and the config-driven runner.
//!
//! Configs are single JSON documents; unknown keys are rejected. The
//! shipped presets carry the reference hyperparameters for both
//! environments plus desk-scale "lite" variants with shortened phases.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dyna::{AgentConfig, ArchConfig, DynaAgent, EmbedFn};
use crate::env::{GridEncoding, GridParams, MiniGrid, MountainCar};
use crate::error::{CoreError, Result};
use crate::loca::{
    run_seeds, ArtifactEnv, CurvePoint, LocaSchedule, PhaseArtifacts, RunResult,
};
use crate::locality::{
    collect_random_dataset, handcrafted_mc_embedding, train_embedding, EmbeddingConfig,
    EmbeddingFn, EmbeddingSnapshot,
};
use crate::nn::Activation;
use crate::replay::{AnyBuffer, BufferStats, FifoBuffer, LofoBuffer, LofoParams, ReservoirBuffer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvConfig {
    Mountaincar,
    Minigrid { encoding: GridEncoding },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BufferConfig {
    Fifo { capacity: usize },
    Reservoir { capacity: usize },
    Lofo { d_local: f64, n_local: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LocalityConfig {
    /// Contrastively trained embedding, loaded from a snapshot file when
    /// given (otherwise trained on the fly by the runner).
    Learned { snapshot: Option<PathBuf> },
    /// Scaled Euclidean distance on raw MountainCar states.
    Handcrafted,
}

/// A fully-resolved experiment. Serializing this struct back out yields a
/// self-describing, replayable record of the run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub env: EnvConfig,
    pub buffer: BufferConfig,
    pub locality: LocalityConfig,
    pub agent: AgentConfig,
    pub arch: ArchConfig,
    pub schedule: LocaSchedule,
    pub embedding: EmbeddingConfig,
    pub seeds: Vec<u64>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(CoreError::InvalidParam("seed list is empty".into()));
        }
        if let BufferConfig::Lofo { d_local, n_local } = self.buffer {
            LofoParams::new(d_local, n_local)?;
        }
        if matches!(self.buffer, BufferConfig::Fifo { capacity: 0 })
            || matches!(self.buffer, BufferConfig::Reservoir { capacity: 0 })
        {
            return Err(CoreError::InvalidParam("buffer capacity must be >= 1".into()));
        }
        if matches!(self.locality, LocalityConfig::Handcrafted)
            && !matches!(self.env, EnvConfig::Mountaincar)
        {
            return Err(CoreError::InvalidParam(
                "handcrafted locality is only defined for mountaincar".into(),
            ));
        }
        self.agent.validate()?;
        self.schedule.validate()?;
        self.embedding.validate()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Reference MountainCar configuration (full schedule).
pub fn mountaincar_full() -> ExperimentConfig {
    ExperimentConfig {
        name: "mountaincar-full".into(),
        env: EnvConfig::Mountaincar,
        buffer: BufferConfig::Lofo {
            d_local: 0.005,
            n_local: 1,
        },
        locality: LocalityConfig::Learned { snapshot: None },
        agent: AgentConfig {
            gamma: 0.99,
            epsilon: 0.5,
            model_lr: 5e-5,
            value_lr: 5e-6,
            model_steps: 5,
            planning_steps: 5,
            model_batch: 32,
            planning_batch: 32,
            warmup_steps: 50_000,
            target_sync: 500,
        },
        arch: ArchConfig {
            model_trunk: vec![64, 64, 63],
            model_head: vec![64, 64],
            q_hidden: vec![64, 64, 64, 64],
            activation: Activation::Tanh,
        },
        schedule: LocaSchedule {
            phase1_steps: 1_500_000,
            phase2_steps: 3_000_000,
            eval_period: 10_000,
            eval_episodes: 10,
            gamma: 0.99,
        },
        embedding: EmbeddingConfig {
            beta: 10.0,
            num_negatives: 128,
            minibatch: 32,
            epochs: 5,
            collect_steps: 100_000,
            widths: vec![64, 64, 64, 16],
            activation: Activation::Tanh,
            lr: 1e-4,
        },
        seeds: (0..10).collect(),
    }
}

/// Desk-scale MountainCar smoke configuration.
pub fn mountaincar_lite() -> ExperimentConfig {
    let mut cfg = mountaincar_full();
    cfg.name = "mountaincar-lite".into();
    cfg.schedule.phase1_steps = 30_000;
    cfg.schedule.phase2_steps = 60_000;
    cfg.schedule.eval_period = 5_000;
    cfg.agent.warmup_steps = 5_000;
    cfg.embedding.collect_steps = 20_000;
    cfg.seeds = (0..3).collect();
    cfg
}

/// Reference MiniGrid configuration (full schedule, one-hot encoding with
/// dense networks at the MountainCar width scale).
pub fn minigrid_full() -> ExperimentConfig {
    ExperimentConfig {
        name: "minigrid-full".into(),
        env: EnvConfig::Minigrid {
            encoding: GridEncoding::OneHot,
        },
        buffer: BufferConfig::Lofo {
            d_local: 0.001,
            n_local: 100,
        },
        locality: LocalityConfig::Learned { snapshot: None },
        agent: AgentConfig {
            gamma: 0.99,
            epsilon: 0.5,
            model_lr: 1e-4,
            value_lr: 6.25e-5,
            model_steps: 1,
            planning_steps: 1,
            model_batch: 128,
            planning_batch: 128,
            warmup_steps: 2_000,
            target_sync: 5_000,
        },
        arch: ArchConfig {
            model_trunk: vec![32, 31],
            model_head: vec![32],
            q_hidden: vec![32, 32],
            activation: Activation::Relu,
        },
        schedule: LocaSchedule {
            phase1_steps: 300_000,
            phase2_steps: 1_500_000,
            eval_period: 10_000,
            eval_episodes: 10,
            gamma: 0.99,
        },
        embedding: EmbeddingConfig {
            beta: 10.0,
            num_negatives: 128,
            minibatch: 32,
            epochs: 5,
            collect_steps: 25_000,
            widths: vec![64, 16],
            activation: Activation::Relu,
            lr: 1e-4,
        },
        seeds: (0..10).collect(),
    }
}

/// Desk-scale MiniGrid configuration: shortened phases, five seeds,
/// reference hyperparameters otherwise.
pub fn minigrid_lite() -> ExperimentConfig {
    let mut cfg = minigrid_full();
    cfg.name = "minigrid-lite".into();
    cfg.schedule.phase1_steps = 100_000;
    cfg.schedule.phase2_steps = 200_000;
    cfg.seeds = (0..5).collect();
    cfg
}

pub const PRESET_NAMES: [&str; 4] = [
    "mountaincar-full",
    "mountaincar-lite",
    "minigrid-full",
    "minigrid-lite",
];

pub fn preset(name: &str) -> Option<ExperimentConfig> {
    match name {
        "mountaincar-full" => Some(mountaincar_full()),
        "mountaincar-lite" => Some(mountaincar_lite()),
        "minigrid-full" => Some(minigrid_full()),
        "minigrid-lite" => Some(minigrid_lite()),
        _ => None,
    }
}

pub fn build_buffer<S>(cfg: &BufferConfig) -> Result<AnyBuffer<S>> {
    Ok(match *cfg {
        BufferConfig::Fifo { capacity } => AnyBuffer::Fifo(FifoBuffer::new(capacity)?),
        BufferConfig::Reservoir { capacity } => {
            AnyBuffer::Reservoir(ReservoirBuffer::new(capacity)?)
        }
        BufferConfig::Lofo { d_local, n_local } => {
            AnyBuffer::Lofo(LofoBuffer::new(LofoParams::new(d_local, n_local)?)?)
        }
    })
}

fn mountaincar_env() -> MountainCar {
    MountainCar::default()
}

fn minigrid_env(encoding: GridEncoding) -> MiniGrid {
    MiniGrid {
        params: GridParams {
            encoding,
            ..GridParams::default()
        },
    }
}

/// Train (or reuse) the locality embedding for a config. Handcrafted
/// locality needs no training and returns `None`.
pub fn prepare_embedding(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<Option<EmbeddingSnapshot>> {
    match &config.locality {
        LocalityConfig::Handcrafted => Ok(None),
        LocalityConfig::Learned { snapshot } => {
            if let Some(path) = snapshot {
                return Ok(Some(EmbeddingSnapshot::load(path)?));
            }
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x10ca11));
            let f = match config.env {
                EnvConfig::Mountaincar => {
                    let env = mountaincar_env();
                    let ds = collect_random_dataset(
                        &env,
                        config.embedding.collect_steps,
                        config.embedding.num_negatives,
                        &mut rng,
                    )?;
                    train_embedding(&ds, &config.embedding, &mut rng)?
                }
                EnvConfig::Minigrid { encoding } => {
                    let env = minigrid_env(encoding);
                    let ds = collect_random_dataset(
                        &env,
                        config.embedding.collect_steps,
                        config.embedding.num_negatives,
                        &mut rng,
                    )?;
                    train_embedding(&ds, &config.embedding, &mut rng)?
                }
            };
            Ok(Some(EmbeddingSnapshot::new(&f, &config.embedding)))
        }
    }
}

/// Per-seed artifacts with the environment specifics erased, ready for
/// file export.
#[derive(Clone, Debug)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub phase1: Option<PhaseArtifacts>,
    pub phase2: Option<PhaseArtifacts>,
    pub buffer_stats: Option<BufferStats>,
}

fn strip<S>(seed: u64, r: RunResult<S>) -> SeedArtifacts {
    SeedArtifacts {
        seed,
        curve: r.curve,
        phase1: r.phase1_artifacts,
        phase2: r.phase2_artifacts,
        buffer_stats: r.final_buffer_stats,
    }
}

fn run_generic<E>(
    env: &E,
    config: &ExperimentConfig,
    embedding: Option<&EmbeddingFn>,
    handcrafted: bool,
) -> Result<Vec<SeedArtifacts>>
where
    E: ArtifactEnv + Sync,
    E::State: Send,
{
    let make_embedder = |_seed: u64| -> Result<Option<EmbedFn<E::State>>> {
        if handcrafted {
            // Only reachable for MountainCar; specialized below.
            unreachable!("handcrafted embedder is built by the mountaincar path")
        } else if let Some(f) = embedding {
            let f = f.clone();
            Ok(Some(Box::new(move |_s: &E::State, obs: ndarray::ArrayView1<'_, f32>| {
                f.embed_boxed(obs)
            })))
        } else {
            Ok(None)
        }
    };
    let results = run_seeds(env, &config.schedule, &config.seeds, |seed| {
        let mut rng =
            <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0xA9E17);
        let buffer = build_buffer(&config.buffer)?;
        let embedder = if buffer.needs_embedding() {
            make_embedder(seed)?
        } else {
            None
        };
        DynaAgent::new(env, &config.arch, config.agent, buffer, embedder, &mut rng)
    })?;
    Ok(results
        .into_iter()
        .map(|(seed, r, _agent)| strip(seed, r))
        .collect())
}

fn run_mountaincar(
    config: &ExperimentConfig,
    embedding: Option<&EmbeddingFn>,
) -> Result<Vec<SeedArtifacts>> {
    let env = mountaincar_env();
    if matches!(config.locality, LocalityConfig::Handcrafted) {
        let results = run_seeds(&env, &config.schedule, &config.seeds, |seed| {
            let mut rng =
                <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed ^ 0xA9E17);
            let buffer = build_buffer(&config.buffer)?;
            let embedder: Option<EmbedFn<crate::env::MCState>> = if buffer.needs_embedding() {
                Some(Box::new(|s: &crate::env::MCState, _obs: ndarray::ArrayView1<'_, f32>| {
                    handcrafted_mc_embedding(*s)
                }))
            } else {
                None
            };
            DynaAgent::new(&env, &config.arch, config.agent, buffer, embedder, &mut rng)
        })?;
        return Ok(results
            .into_iter()
            .map(|(seed, r, _agent)| strip(seed, r))
            .collect());
    }
    run_generic(&env, config, embedding, false)
}

/// Run every seed of a validated config; the embedding must already be
/// prepared when the buffer needs one.
pub fn run_experiment(
    config: &ExperimentConfig,
    embedding: Option<&EmbeddingFn>,
) -> Result<Vec<SeedArtifacts>> {
    config.validate()?;
    if matches!(config.buffer, BufferConfig::Lofo { .. })
        && matches!(config.locality, LocalityConfig::Learned { .. })
        && embedding.is_none()
    {
        return Err(CoreError::InvalidParam(
            "local-forgetting buffer with learned locality needs a trained embedding".into(),
        ));
    }
    match config.env {
        EnvConfig::Mountaincar => run_mountaincar(config, embedding),
        EnvConfig::Minigrid { encoding } => {
            run_generic(&minigrid_env(encoding), config, embedding, false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_parse_and_validate() {
        for name in PRESET_NAMES {
            let cfg = preset(name).unwrap();
            cfg.validate().unwrap();
            let round: ExperimentConfig = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
            assert_eq!(round.name, cfg.name);
        }
        assert!(preset("nope").is_none());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut json: serde_json::Value =
            serde_json::from_str(&minigrid_lite().to_json()).unwrap();
        json.as_object_mut()
            .unwrap()
            .insert("surprise".into(), serde_json::json!(1));
        assert!(ExperimentConfig::from_json(&json.to_string()).is_err());
    }

    #[test]
    fn invalid_lofo_params_are_rejected_before_any_compute() {
        let mut cfg = minigrid_lite();
        cfg.buffer = BufferConfig::Lofo {
            d_local: -0.5,
            n_local: 1,
        };
        assert!(cfg.validate().is_err());
        assert!(run_experiment(&cfg, None).is_err());
    }

    #[test]
    fn handcrafted_locality_requires_mountaincar() {
        let mut cfg = minigrid_lite();
        cfg.locality = LocalityConfig::Handcrafted;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn tiny_experiment_runs_end_to_end() {
        let mut cfg = minigrid_lite();
        cfg.name = "tiny".into();
        cfg.schedule.phase1_steps = 300;
        cfg.schedule.phase2_steps = 300;
        cfg.schedule.eval_period = 200;
        cfg.agent.warmup_steps = 50;
        cfg.agent.model_batch = 16;
        cfg.agent.planning_batch = 16;
        cfg.arch = ArchConfig {
            model_trunk: vec![8, 7],
            model_head: vec![8],
            q_hidden: vec![8],
            activation: Activation::Relu,
        };
        cfg.buffer = BufferConfig::Fifo { capacity: 5_000 };
        cfg.seeds = vec![0, 1];
        let artifacts = run_experiment(&cfg, None).unwrap();
        assert_eq!(artifacts.len(), 2);
        for a in &artifacts {
            assert_eq!(a.curve.len(), 3);
            let p1 = a.phase1.as_ref().unwrap();
            assert_eq!(p1.histogram.total(), 300);
            assert!(a.phase2.as_ref().unwrap().histogram.total() == 600);
            assert!(a.buffer_stats.unwrap().inserts == 600);
        }
        // Same seeds, same artifacts.
        let again = run_experiment(&cfg, None).unwrap();
        assert_eq!(
            crate::loca::curve_csv(&artifacts[0].curve),
            crate::loca::curve_csv(&again[0].curve)
        );
    }

    #[test]
    fn lofo_without_embedding_is_rejected() {
        let mut cfg = minigrid_lite();
        cfg.schedule.phase1_steps = 10;
        cfg.schedule.phase2_steps = 10;
        assert!(matches!(
            run_experiment(&cfg, None),
            Err(CoreError::InvalidParam(_))
        ));
    }

    #[test]
    fn presets_carry_the_reference_hyperparameters() {
        let mc = mountaincar_full();
        assert_eq!(mc.schedule.phase1_steps, 1_500_000);
        assert_eq!(mc.schedule.phase2_steps, 3_000_000);
        assert_eq!(mc.schedule.eval_period, 10_000);
        assert_eq!(mc.schedule.eval_episodes, 10);
        assert_eq!(mc.agent.value_lr, 5e-6);
        assert_eq!(mc.agent.model_lr, 5e-5);
        assert_eq!(mc.agent.epsilon, 0.5);
        assert_eq!(mc.agent.warmup_steps, 50_000);
        assert_eq!(mc.agent.target_sync, 500);
        assert_eq!(mc.agent.model_steps, 5);
        assert_eq!(mc.agent.planning_steps, 5);
        assert_eq!(mc.agent.model_batch, 32);
        assert_eq!(mc.arch.model_trunk, vec![64, 64, 63]);
        assert_eq!(mc.arch.q_hidden, vec![64, 64, 64, 64]);
        assert_eq!(mc.buffer, BufferConfig::Lofo { d_local: 0.005, n_local: 1 });
        assert_eq!(mc.embedding.beta, 10.0);
        assert_eq!(mc.embedding.num_negatives, 128);
        assert_eq!(mc.embedding.minibatch, 32);
        assert_eq!(mc.embedding.epochs, 5);
        assert_eq!(mc.embedding.collect_steps, 100_000);
        assert_eq!(mc.embedding.widths, vec![64, 64, 64, 16]);
        assert_eq!(mc.embedding.lr, 1e-4);
        assert_eq!(mc.seeds.len(), 10);

        let grid = minigrid_full();
        assert_eq!(grid.schedule.phase1_steps, 300_000);
        assert_eq!(grid.schedule.phase2_steps, 1_500_000);
        assert_eq!(grid.agent.value_lr, 6.25e-5);
        assert_eq!(grid.agent.model_lr, 1e-4);
        assert_eq!(grid.agent.warmup_steps, 2_000);
        assert_eq!(grid.agent.target_sync, 5_000);
        assert_eq!(grid.agent.model_steps, 1);
        assert_eq!(grid.agent.model_batch, 128);
        assert_eq!(grid.buffer, BufferConfig::Lofo { d_local: 0.001, n_local: 100 });
        assert_eq!(grid.embedding.collect_steps, 25_000);
        assert_eq!(grid.env, EnvConfig::Minigrid { encoding: GridEncoding::OneHot });

        let lite = minigrid_lite();
        assert_eq!(lite.schedule.phase1_steps, 100_000);
        assert_eq!(lite.schedule.phase2_steps, 200_000);
        assert_eq!(lite.seeds.len(), 5);
    }
}
