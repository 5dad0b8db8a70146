//! Deep Dyna-Q.
//!
//! The agent learns a world model (dynamics, reward and termination
//! networks) from replayed real transitions and trains its Q-function
//! exclusively on model predictions: planning batches draw stored
//! (state, action) pairs from the buffer, query the model for
//! (reward, next state, termination) and regress the online Q-value
//! toward `r + gamma * (1 - t) * max_a Q_target(s', a)`. No model-free
//! update path exists.
//!
//! Each model network splits into a trunk and a head; the action joins as
//! a one-hot vector concatenated to the trunk's mid-layer output.

use ndarray::{Array2, ArrayView1};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::env::{Episode, LocaEnv, Phase, ResetMode, StepRecord};
use crate::error::{CoreError, Result};
use crate::nn::{
    Activation, AdamParams, AdamState, BatchCache, BatchInput, DenseNet, EncodedBatch,
    NetSnapshot,
};
use crate::replay::{AnyBuffer, Transition};

/// Training inserts into the buffer and updates parameters; evaluation
/// does neither.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentMode {
    Training,
    Evaluation,
}

/// Agent hyperparameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub epsilon: f64,
    pub model_lr: f64,
    pub value_lr: f64,
    /// Model-learning updates per environment step.
    pub model_steps: u32,
    /// Planning updates per environment step.
    pub planning_steps: u32,
    pub model_batch: usize,
    pub planning_batch: usize,
    /// Uniform-random steps before any update runs.
    pub warmup_steps: u64,
    /// Planning updates between target-network syncs.
    pub target_sync: u64,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CoreError::InvalidParam(format!(
                "gamma must be in (0, 1), got {}",
                self.gamma
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(CoreError::InvalidParam(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Network shapes. `model_trunk` are the hidden widths up to and including
/// the concat layer; `model_head` the hidden widths after the action joins.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub model_trunk: Vec<usize>,
    pub model_head: Vec<usize>,
    pub q_hidden: Vec<usize>,
    pub activation: Activation,
}

/// A trunk/head pair with the action one-hot concatenated in between.
#[derive(Clone, Debug)]
pub struct SplitNet {
    pub trunk: DenseNet<f32>,
    pub head: DenseNet<f32>,
    n_actions: usize,
}

pub struct SplitCache {
    trunk: BatchCache<f32>,
    head: BatchCache<f32>,
    head_input: Array2<f32>,
}

impl SplitNet {
    pub fn new(
        obs_dim: usize,
        n_actions: usize,
        arch: &ArchConfig,
        out_width: usize,
        output: Activation,
        rng: &mut (impl Rng + ?Sized),
    ) -> Self {
        let mut trunk_widths = vec![obs_dim];
        trunk_widths.extend_from_slice(&arch.model_trunk);
        let trunk = DenseNet::new(&trunk_widths, arch.activation, arch.activation, rng);
        let mut head_widths = vec![trunk_widths.last().unwrap() + n_actions];
        head_widths.extend_from_slice(&arch.model_head);
        head_widths.push(out_width);
        let head = DenseNet::new(&head_widths, arch.activation, output, rng);
        SplitNet {
            trunk,
            head,
            n_actions,
        }
    }

    fn head_input(&self, trunk_out: &Array2<f32>, actions: &[u8]) -> Array2<f32> {
        let b = trunk_out.nrows();
        let tw = trunk_out.ncols();
        let mut joined = Array2::zeros((b, tw + self.n_actions));
        joined.slice_mut(ndarray::s![.., ..tw]).assign(trunk_out);
        for (r, &a) in actions.iter().enumerate() {
            joined[[r, tw + a as usize]] = 1.0;
        }
        joined
    }

    pub fn forward(&self, obs: BatchInput<'_, f32>, actions: &[u8]) -> Array2<f32> {
        let trunk_out = self.trunk.forward_batch(obs);
        let joined = self.head_input(&trunk_out, actions);
        self.head.forward_batch(BatchInput::Dense(joined.view()))
    }

    pub fn forward_cached(&self, obs: BatchInput<'_, f32>, actions: &[u8]) -> SplitCache {
        let trunk = self.trunk.forward_cached(obs);
        let joined = self.head_input(trunk.output(), actions);
        let head = self.head.forward_cached(BatchInput::Dense(joined.view()));
        SplitCache {
            trunk,
            head,
            head_input: joined,
        }
    }

    pub fn backward(&self, cache: &SplitCache, d_out: &Array2<f32>) -> SplitGrads {
        let (head_grads, d_head_in) = self.head.backward_batch(&cache.head, d_out);
        let d_head_in = d_head_in.expect("dense head input always yields a gradient");
        let tw = cache.head_input.ncols() - self.n_actions;
        let d_trunk_out = d_head_in.slice(ndarray::s![.., ..tw]).to_owned();
        let (trunk_grads, _) = self.trunk.backward_batch(&cache.trunk, &d_trunk_out);
        SplitGrads {
            trunk: trunk_grads,
            head: head_grads,
        }
    }

    pub fn params_hash(&self) -> u64 {
        self.trunk.params_hash() ^ self.head.params_hash().rotate_left(1)
    }
}

pub struct SplitGrads {
    pub trunk: crate::nn::Gradients<f32>,
    pub head: crate::nn::Gradients<f32>,
}

#[derive(Clone, Debug)]
struct SplitAdam {
    trunk: AdamState<f32>,
    head: AdamState<f32>,
}

impl SplitAdam {
    fn new(net: &SplitNet, lr: f64) -> Self {
        SplitAdam {
            trunk: AdamState::new(&net.trunk, AdamParams::with_lr(lr)),
            head: AdamState::new(&net.head, AdamParams::with_lr(lr)),
        }
    }

    fn apply(&mut self, net: &mut SplitNet, grads: &SplitGrads) -> Result<()> {
        self.trunk.apply(&mut net.trunk, &grads.trunk)?;
        self.head.apply(&mut net.head, &grads.head)
    }
}

/// Learned dynamics, reward and termination predictors.
#[derive(Clone, Debug)]
pub struct WorldModel {
    pub dynamics: SplitNet,
    pub reward: SplitNet,
    pub termination: SplitNet,
}

impl WorldModel {
    pub fn new(
        obs_dim: usize,
        n_actions: usize,
        arch: &ArchConfig,
        rng: &mut (impl Rng + ?Sized),
    ) -> Self {
        WorldModel {
            dynamics: SplitNet::new(obs_dim, n_actions, arch, obs_dim, Activation::Identity, rng),
            reward: SplitNet::new(obs_dim, n_actions, arch, 1, Activation::Identity, rng),
            termination: SplitNet::new(obs_dim, n_actions, arch, 1, Activation::Sigmoid, rng),
        }
    }

    pub fn params_hash(&self) -> u64 {
        self.dynamics.params_hash()
            ^ self.reward.params_hash().rotate_left(8)
            ^ self.termination.params_hash().rotate_left(16)
    }
}

/// Model outputs for a batch of (state, action) queries.
pub struct ModelPrediction {
    pub next_obs: Array2<f32>,
    pub reward: Vec<f32>,
    pub terminal: Vec<f32>,
}

/// Anything planning can query for one-step predictions. Implemented by
/// [`WorldModel`]; tests inject exact models.
pub trait ModelPredictor {
    fn predict(&self, obs: BatchInput<'_, f32>, actions: &[u8]) -> ModelPrediction;
}

impl ModelPredictor for WorldModel {
    fn predict(&self, obs: BatchInput<'_, f32>, actions: &[u8]) -> ModelPrediction {
        let next_obs = self.dynamics.forward(obs, actions);
        let reward = self.reward.forward(obs, actions).column(0).to_vec();
        let terminal = self.termination.forward(obs, actions).column(0).to_vec();
        ModelPrediction {
            next_obs,
            reward,
            terminal,
        }
    }
}

/// Q-network with a periodically synced target copy.
#[derive(Clone, Debug)]
pub struct QFunction {
    pub online: DenseNet<f32>,
    pub target: DenseNet<f32>,
    pub n_actions: usize,
}

impl QFunction {
    pub fn new(
        obs_dim: usize,
        n_actions: usize,
        q_hidden: &[usize],
        activation: Activation,
        rng: &mut (impl Rng + ?Sized),
    ) -> Self {
        let mut widths = vec![obs_dim];
        widths.extend_from_slice(q_hidden);
        widths.push(n_actions);
        let online = DenseNet::new(&widths, activation, Activation::Identity, rng);
        let target = online.clone();
        QFunction {
            online,
            target,
            n_actions,
        }
    }
}

/// Copy the online parameters into the target network.
pub fn sync_target(q: &mut QFunction) {
    q.target = q.online.clone();
}

/// Greedy argmax with ties broken by the lowest action index.
pub fn greedy_action(values: ArrayView1<'_, f32>) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

/// Behavior policy: epsilon-greedy while training, pure greedy while
/// evaluating (epsilon is ignored there).
pub fn act(
    q: &QFunction,
    obs: ArrayView1<'_, f32>,
    mode: AgentMode,
    epsilon: f64,
    rng: &mut dyn RngCore,
) -> usize {
    match mode {
        AgentMode::Evaluation => greedy_action(q.online.forward(obs).view()),
        AgentMode::Training => {
            if rng.random_range(0.0..1.0) < epsilon {
                rng.random_range(0..q.n_actions)
            } else {
                greedy_action(q.online.forward(obs).view())
            }
        }
    }
}

/// One-step TD target with the termination probability as a continuous
/// bootstrap cut.
#[inline]
pub fn td_target(reward: f32, terminal: f32, q_max: f32, gamma: f64) -> f32 {
    reward + gamma as f32 * (1.0 - terminal) * q_max
}

/// Per-update model losses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelLossRecord {
    pub dynamics: f64,
    pub reward: f64,
    pub termination: f64,
}

const BCE_EPS: f32 = 1e-6;

fn mse_grad(pred: &Array2<f32>, target: &Array2<f32>) -> (f64, Array2<f32>) {
    let b = pred.nrows() as f32;
    let diff = pred - target;
    let loss = diff.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / b as f64;
    (loss, diff * (2.0 / b))
}

fn bce_grad(pred: &Array2<f32>, target: &[f32]) -> (f64, Array2<f32>) {
    let b = pred.nrows() as f32;
    let mut d = Array2::zeros(pred.raw_dim());
    let mut loss = 0.0f64;
    for (i, &y) in target.iter().enumerate() {
        let p = pred[[i, 0]].clamp(BCE_EPS, 1.0 - BCE_EPS);
        loss -= (y as f64) * (p as f64).ln() + (1.0 - y as f64) * (1.0 - p as f64).ln();
        d[[i, 0]] = (p - y) / (p * (1.0 - p)) / b;
    }
    (loss / b as f64, d)
}

/// Optimizer bundle for the three model networks.
#[derive(Clone, Debug)]
pub struct ModelOptim {
    dynamics: SplitAdam,
    reward: SplitAdam,
    termination: SplitAdam,
}

impl ModelOptim {
    pub fn new(model: &WorldModel, lr: f64) -> Self {
        ModelOptim {
            dynamics: SplitAdam::new(&model.dynamics, lr),
            reward: SplitAdam::new(&model.reward, lr),
            termination: SplitAdam::new(&model.termination, lr),
        }
    }
}

/// One Adam step on each model network against a batch of real
/// transitions: MSE for next-observation and reward, binary cross-entropy
/// for termination.
pub fn model_update(
    model: &mut WorldModel,
    optim: &mut ModelOptim,
    obs: BatchInput<'_, f32>,
    actions: &[u8],
    next_obs: &Array2<f32>,
    rewards: &[f32],
    terminals: &[f32],
) -> Result<ModelLossRecord> {
    let cache = model.dynamics.forward_cached(obs, actions);
    let (dyn_loss, d_out) = mse_grad(cache.head.output(), next_obs);
    let grads = model.dynamics.backward(&cache, &d_out);
    optim.dynamics.apply(&mut model.dynamics, &grads)?;

    let reward_target =
        Array2::from_shape_vec((rewards.len(), 1), rewards.to_vec()).expect("reward column");
    let cache = model.reward.forward_cached(obs, actions);
    let (rew_loss, d_out) = mse_grad(cache.head.output(), &reward_target);
    let grads = model.reward.backward(&cache, &d_out);
    optim.reward.apply(&mut model.reward, &grads)?;

    let cache = model.termination.forward_cached(obs, actions);
    let (term_loss, d_out) = bce_grad(cache.head.output(), terminals);
    let grads = model.termination.backward(&cache, &d_out);
    optim.termination.apply(&mut model.termination, &grads)?;

    let record = ModelLossRecord {
        dynamics: dyn_loss,
        reward: rew_loss,
        termination: term_loss,
    };
    if !(record.dynamics.is_finite() && record.reward.is_finite() && record.termination.is_finite())
    {
        return Err(CoreError::NonFinite {
            quantity: "model loss".into(),
            context: "model update".into(),
        });
    }
    Ok(record)
}

/// One planning step: query the model at stored (state, action) pairs and
/// take an Adam step on the online Q-network toward the TD targets built
/// from the target network. Returns the TD loss.
pub fn planning_update<M: ModelPredictor>(
    q: &mut QFunction,
    model: &M,
    optim: &mut AdamState<f32>,
    obs: BatchInput<'_, f32>,
    actions: &[u8],
    gamma: f64,
) -> Result<f64> {
    let pred = model.predict(obs, actions);
    let q_next = q
        .target
        .forward_batch(BatchInput::Dense(pred.next_obs.view()));
    let cache = q.online.forward_cached(obs);
    let q_out = cache.output();
    let b = actions.len();
    let mut d_out = Array2::zeros(q_out.raw_dim());
    let mut loss = 0.0f64;
    for i in 0..b {
        let q_max = q_next
            .row(i)
            .iter()
            .cloned()
            .fold(f32::NEG_INFINITY, f32::max);
        let y = td_target(pred.reward[i], pred.terminal[i], q_max, gamma);
        let a = actions[i] as usize;
        let err = q_out[[i, a]] - y;
        loss += (err as f64).powi(2);
        d_out[[i, a]] = 2.0 * err / b as f32;
    }
    loss /= b as f64;
    if !loss.is_finite() {
        return Err(CoreError::NonFinite {
            quantity: "TD loss".into(),
            context: "planning update".into(),
        });
    }
    let (grads, _) = q.online.backward_batch(&cache, &d_out);
    optim.apply(&mut q.online, &grads)?;
    Ok(loss)
}

/// Computes the cached embedding stored with each transition, given the
/// raw state and its encoded observation.
pub type EmbedFn<S> = Box<dyn Fn(&S, ArrayView1<'_, f32>) -> Box<[f32]> + Send + Sync>;

/// The assembled agent.
pub struct DynaAgent<S> {
    pub model: WorldModel,
    pub q: QFunction,
    model_optim: ModelOptim,
    q_optim: AdamState<f32>,
    pub buffer: AnyBuffer<S>,
    embedder: Option<EmbedFn<S>>,
    pub config: AgentConfig,
    pub mode: AgentMode,
    env_steps: u64,
    updates_since_sync: u64,
}

impl<S: Copy + PartialEq + std::fmt::Debug + Send + Sync + 'static> DynaAgent<S> {
    pub fn new<E: LocaEnv<State = S>>(
        env: &E,
        arch: &ArchConfig,
        config: AgentConfig,
        buffer: AnyBuffer<S>,
        embedder: Option<EmbedFn<S>>,
        rng: &mut (impl Rng + ?Sized),
    ) -> Result<Self> {
        config.validate()?;
        if buffer.needs_embedding() && embedder.is_none() {
            return Err(CoreError::InvalidParam(
                "local-forgetting buffer requires an embedder".into(),
            ));
        }
        let model = WorldModel::new(env.obs_dim(), env.n_actions(), arch, rng);
        let q = QFunction::new(
            env.obs_dim(),
            env.n_actions(),
            &arch.q_hidden,
            arch.activation,
            rng,
        );
        let model_optim = ModelOptim::new(&model, config.model_lr);
        let q_optim = AdamState::new(&q.online, AdamParams::with_lr(config.value_lr));
        Ok(DynaAgent {
            model,
            q,
            model_optim,
            q_optim,
            buffer,
            embedder,
            config,
            mode: AgentMode::Training,
            env_steps: 0,
            updates_since_sync: 0,
        })
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn in_warmup(&self) -> bool {
        self.env_steps < self.config.warmup_steps
    }

    /// Behavior policy. Warmup steps act uniformly at random; afterwards
    /// epsilon-greedy in training mode, greedy in evaluation mode.
    pub fn select_action<E: LocaEnv<State = S>>(
        &self,
        env: &E,
        state: S,
        rng: &mut dyn RngCore,
    ) -> usize {
        if self.mode == AgentMode::Training && self.in_warmup() {
            return rng.random_range(0..env.n_actions());
        }
        act(
            &self.q,
            env.encode(state).view(),
            self.mode,
            self.config.epsilon,
            rng,
        )
    }

    /// Greedy action under the online network (used by frozen evaluation).
    pub fn greedy<E: LocaEnv<State = S>>(&self, env: &E, state: S) -> usize {
        greedy_action(self.q.online.forward(env.encode(state).view()).view())
    }

    /// Record a real transition and run the configured model-learning and
    /// planning updates. Training mode only.
    pub fn observe<E: LocaEnv<State = S>>(
        &mut self,
        env: &E,
        rec: &StepRecord<S>,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        debug_assert_eq!(self.mode, AgentMode::Training);
        // Time-limit truncation is stored as non-terminal.
        let mut transition = Transition::new(
            rec.state,
            rec.action as u8,
            rec.reward as f32,
            rec.next_state,
            rec.terminal,
        );
        if self.buffer.needs_embedding() {
            let embed = self.embedder.as_ref().expect("checked at construction");
            let obs = env.encode(rec.state);
            transition = transition.with_embedding(embed(&rec.state, obs.view()));
        }
        self.buffer.insert(transition, rng)?;
        self.env_steps += 1;

        if self.in_warmup() {
            return Ok(());
        }
        for _ in 0..self.config.model_steps {
            let idx = self.buffer.sample_indices(self.config.model_batch, rng)?;
            let (obs, actions, next, rewards, terminals) = self.model_batch(env, &idx);
            model_update(
                &mut self.model,
                &mut self.model_optim,
                obs.as_input(),
                &actions,
                &next,
                &rewards,
                &terminals,
            )?;
        }
        for _ in 0..self.config.planning_steps {
            let idx = self
                .buffer
                .sample_indices(self.config.planning_batch, rng)?;
            let (obs, actions) = self.planning_batch(env, &idx);
            planning_update(
                &mut self.q,
                &self.model,
                &mut self.q_optim,
                obs.as_input(),
                &actions,
                self.config.gamma,
            )?;
            self.updates_since_sync += 1;
            if self.updates_since_sync >= self.config.target_sync {
                sync_target(&mut self.q);
                self.updates_since_sync = 0;
            }
        }
        Ok(())
    }

    fn model_batch<E: LocaEnv<State = S>>(
        &self,
        env: &E,
        idx: &[usize],
    ) -> (EncodedBatch, Vec<u8>, Array2<f32>, Vec<f32>, Vec<f32>) {
        let mut states = Vec::with_capacity(idx.len());
        let mut next_states = Vec::with_capacity(idx.len());
        let mut actions = Vec::with_capacity(idx.len());
        let mut rewards = Vec::with_capacity(idx.len());
        let mut terminals = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = self.buffer.get(i);
            states.push(t.state);
            next_states.push(t.next_state);
            actions.push(t.action);
            rewards.push(t.reward);
            terminals.push(if t.terminal { 1.0 } else { 0.0 });
        }
        let obs = env.encode_batch(&states);
        let next = env.encode_batch(&next_states).to_dense();
        (obs, actions, next, rewards, terminals)
    }

    fn planning_batch<E: LocaEnv<State = S>>(
        &self,
        env: &E,
        idx: &[usize],
    ) -> (EncodedBatch, Vec<u8>) {
        let mut states = Vec::with_capacity(idx.len());
        let mut actions = Vec::with_capacity(idx.len());
        for &i in idx {
            let t = self.buffer.get(i);
            states.push(t.state);
            actions.push(t.action);
        }
        (env.encode_batch(&states), actions)
    }

    /// Hash over every learnable parameter (all five networks).
    pub fn params_hash(&self) -> u64 {
        self.model.params_hash()
            ^ self.q.online.params_hash().rotate_left(24)
            ^ self.q.target.params_hash().rotate_left(32)
    }
}

/// Drive one training step: reset the episode if needed, act, step the
/// environment, then let the agent learn from the transition.
pub fn agent_env_step<E: LocaEnv>(
    agent: &mut DynaAgent<E::State>,
    env: &E,
    episode: &mut Episode<E::State>,
    phase: Phase,
    reset_mode: ResetMode,
    rng: &mut dyn RngCore,
) -> Result<StepRecord<E::State>> {
    if episode.finished {
        *episode = Episode::begin(env, reset_mode, rng);
    }
    let action = agent.select_action(env, episode.state, rng);
    let rec = episode.step(env, action, phase);
    agent.observe(env, &rec, rng)?;
    Ok(rec)
}

/// Checkpoint of all five networks plus optimizer state and counters.
#[derive(Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub dynamics_trunk: NetSnapshot,
    pub dynamics_head: NetSnapshot,
    pub reward_trunk: NetSnapshot,
    pub reward_head: NetSnapshot,
    pub termination_trunk: NetSnapshot,
    pub termination_head: NetSnapshot,
    pub q_online: NetSnapshot,
    pub q_target: NetSnapshot,
    pub moments: Vec<(u64, Vec<f64>, Vec<f64>)>,
    pub env_steps: u64,
    pub updates_since_sync: u64,
}

impl<S: Copy + PartialEq + std::fmt::Debug + Send + Sync + 'static> DynaAgent<S> {
    pub fn checkpoint(&self) -> AgentCheckpoint {
        let moments = vec![
            self.model_optim.dynamics.trunk.export_moments(),
            self.model_optim.dynamics.head.export_moments(),
            self.model_optim.reward.trunk.export_moments(),
            self.model_optim.reward.head.export_moments(),
            self.model_optim.termination.trunk.export_moments(),
            self.model_optim.termination.head.export_moments(),
            self.q_optim.export_moments(),
        ];
        AgentCheckpoint {
            dynamics_trunk: NetSnapshot::from_net(&self.model.dynamics.trunk),
            dynamics_head: NetSnapshot::from_net(&self.model.dynamics.head),
            reward_trunk: NetSnapshot::from_net(&self.model.reward.trunk),
            reward_head: NetSnapshot::from_net(&self.model.reward.head),
            termination_trunk: NetSnapshot::from_net(&self.model.termination.trunk),
            termination_head: NetSnapshot::from_net(&self.model.termination.head),
            q_online: NetSnapshot::from_net(&self.q.online),
            q_target: NetSnapshot::from_net(&self.q.target),
            moments,
            env_steps: self.env_steps,
            updates_since_sync: self.updates_since_sync,
        }
    }

    pub fn restore(&mut self, ck: &AgentCheckpoint) -> Result<()> {
        self.model.dynamics.trunk = ck.dynamics_trunk.into_net()?;
        self.model.dynamics.head = ck.dynamics_head.into_net()?;
        self.model.reward.trunk = ck.reward_trunk.into_net()?;
        self.model.reward.head = ck.reward_head.into_net()?;
        self.model.termination.trunk = ck.termination_trunk.into_net()?;
        self.model.termination.head = ck.termination_head.into_net()?;
        self.q.online = ck.q_online.into_net()?;
        self.q.target = ck.q_target.into_net()?;
        if ck.moments.len() != 7 {
            return Err(CoreError::Snapshot("expected 7 moment blocks".into()));
        }
        let slots: [&mut AdamState<f32>; 7] = [
            &mut self.model_optim.dynamics.trunk,
            &mut self.model_optim.dynamics.head,
            &mut self.model_optim.reward.trunk,
            &mut self.model_optim.reward.head,
            &mut self.model_optim.termination.trunk,
            &mut self.model_optim.termination.head,
            &mut self.q_optim,
        ];
        for (slot, (step, m, v)) in slots.into_iter().zip(ck.moments.iter()) {
            slot.import_moments(*step, m, v)?;
        }
        self.env_steps = ck.env_steps;
        self.updates_since_sync = ck.updates_since_sync;
        Ok(())
    }
}
