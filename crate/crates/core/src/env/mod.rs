//! Native environments for the two-phase adaptivity setup.
//!
//! Both environments expose two terminal targets (T1, T2) whose rewards
//! depend on the active task phase, plus a zone around T1 whose boundary
//! acts as a one-way passage. Dynamics are deterministic; all randomness
//! lives in the reset distributions.

mod minigrid;
mod mountain_car;

pub use minigrid::{
    all_states, grid_encode, grid_reset, grid_step, in_t1_zone, is_terminal_cell,
    non_terminal_states, state_index, zone_states, GridEncoding, GridParams, GridState, MiniGrid,
    GRID_SIZE,
};
pub use mountain_car::{
    mc_encode, mc_in_t1_zone, mc_reset, mc_step, McParams, MCState, MountainCar, V_MAX, V_MIN,
    X_MAX, X_MIN,
};

use ndarray::Array1;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::nn::EncodedBatch;

/// Task phase. Phase A pays 4 at T1, phase B pays 1; T2 pays 2 in both.
/// The phase is a property of the harness and is never observable by the
/// agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    A,
    B,
}

/// Initial-state distribution selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResetMode {
    /// Uniform over the full (non-terminal) state-space.
    TrainPhase1,
    /// Uniform over states inside the T1-zone.
    TrainPhase2,
    /// Uniform over the evaluation region.
    Eval,
}

/// Terminal rewards per target and phase.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardScheme {
    pub t1_phase_a: f64,
    pub t1_phase_b: f64,
    pub t2: f64,
}

impl Default for RewardScheme {
    fn default() -> Self {
        RewardScheme {
            t1_phase_a: 4.0,
            t1_phase_b: 1.0,
            t2: 2.0,
        }
    }
}

impl RewardScheme {
    pub fn t1(&self, phase: Phase) -> f64 {
        match phase {
            Phase::A => self.t1_phase_a,
            Phase::B => self.t1_phase_b,
        }
    }
}

/// Result of one environment step. The reward is zero unless the step is
/// terminal, and `terminal`/`truncated` are never both set.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Array1<f32>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Common environment surface used by the agent and harness. Environments
/// are pure transition functions; episode bookkeeping lives in [`Episode`].
pub trait LocaEnv: Send + Sync {
    type State: Copy + PartialEq + std::fmt::Debug + Send + Sync + 'static;

    fn n_actions(&self) -> usize;
    fn obs_dim(&self) -> usize;
    /// Steps after which an episode is truncated (with reward 0).
    fn episode_cap(&self) -> u32;
    /// Deterministic transition: next state, reward, terminal flag.
    fn transition(&self, s: Self::State, action: usize, phase: Phase)
        -> (Self::State, f64, bool);
    fn sample_reset(&self, mode: ResetMode, rng: &mut dyn RngCore) -> Self::State;
    fn encode(&self, s: Self::State) -> Array1<f32>;
    fn encode_batch(&self, states: &[Self::State]) -> EncodedBatch;
    /// 2-d projection used for state histograms.
    fn hist_point(&self, s: Self::State) -> (f64, f64);
}

/// Record of one step taken through [`Episode::step`].
#[derive(Clone, Copy, Debug)]
pub struct StepRecord<S> {
    pub state: S,
    pub action: usize,
    pub next_state: S,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

/// Episode state machine: current state plus the step counter that
/// enforces the environment's time limit.
#[derive(Clone, Copy, Debug)]
pub struct Episode<S> {
    pub state: S,
    pub steps: u32,
    pub finished: bool,
}

impl<S: Copy> Episode<S> {
    pub fn begin<E: LocaEnv<State = S>>(env: &E, mode: ResetMode, rng: &mut dyn RngCore) -> Self {
        Episode {
            state: env.sample_reset(mode, rng),
            steps: 0,
            finished: false,
        }
    }

    pub fn step<E: LocaEnv<State = S>>(
        &mut self,
        env: &E,
        action: usize,
        phase: Phase,
    ) -> StepRecord<S> {
        debug_assert!(!self.finished, "stepping a finished episode");
        let prev = self.state;
        let (next, reward, terminal) = env.transition(prev, action, phase);
        self.steps += 1;
        let truncated = !terminal && self.steps >= env.episode_cap();
        self.state = next;
        self.finished = terminal || truncated;
        StepRecord {
            state: prev,
            action,
            next_state: next,
            reward,
            terminal,
            truncated,
        }
    }
}
