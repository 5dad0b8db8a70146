//! MountainCar with two terminal targets and a one-way zone around T1.
//!
//! Classic underpowered-cart dynamics. T1 sits at the top of the hill
//! (position > 0.5 with positive velocity), T2 at the valley (a small
//! ellipse around position -0.52, velocity 0). The T1-zone covers
//! 0.4 <= position <= 0.5, 0 <= velocity <= 0.07; a raw successor that
//! would leave the zone anywhere but through T1 is rejected and the state
//! held in place.

use ndarray::{array, Array1, Array2};
use rand::{Rng, RngCore};

use super::{LocaEnv, Phase, ResetMode, RewardScheme, StepOutcome};
use crate::nn::EncodedBatch;

pub const X_MIN: f64 = -1.2;
pub const X_MAX: f64 = 0.6;
pub const V_MIN: f64 = -0.07;
pub const V_MAX: f64 = 0.07;

const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

/// Cart state; both fields stay clamped to their ranges after every step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MCState {
    pub position: f64,
    pub velocity: f64,
}

impl MCState {
    pub fn new(position: f64, velocity: f64) -> Self {
        MCState { position, velocity }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct McParams {
    pub rewards: RewardScheme,
    pub episode_cap: u32,
}

impl Default for McParams {
    fn default() -> Self {
        McParams {
            rewards: RewardScheme::default(),
            episode_cap: 500,
        }
    }
}

/// T1-zone membership: 0.4 <= x <= 0.5 and 0 <= v <= 0.07.
pub fn mc_in_t1_zone(s: MCState) -> bool {
    (0.4..=0.5).contains(&s.position) && (0.0..=V_MAX).contains(&s.velocity)
}

fn at_t1(s: MCState) -> bool {
    s.position > 0.5 && s.velocity > 0.0
}

fn at_t2(s: MCState) -> bool {
    let dx = s.position + 0.52;
    dx * dx + 100.0 * s.velocity * s.velocity <= 0.07 * 0.07
}

/// One step of the deterministic dynamics. `action` is the applied force
/// direction in {-1, 0, +1}.
pub fn mc_step(
    state: MCState,
    action: i32,
    phase: Phase,
    params: &McParams,
) -> (MCState, StepOutcome) {
    assert!((-1..=1).contains(&action), "action must be -1, 0 or +1");
    let v_raw = state.velocity + FORCE * action as f64 - GRAVITY * (3.0 * state.position).cos();
    let v = v_raw.clamp(V_MIN, V_MAX);
    let x = (state.position + v).clamp(X_MIN, X_MAX);
    let raw_next = MCState::new(x, v);

    // One-way passage: inside the zone, the only way out is through T1.
    // A held state is never terminal, so the checks below stay valid.
    let next = if mc_in_t1_zone(state) && !mc_in_t1_zone(raw_next) && !at_t1(raw_next) {
        state
    } else {
        raw_next
    };

    let (reward, terminal) = if at_t1(next) {
        (params.rewards.t1(phase), true)
    } else if at_t2(next) {
        (params.rewards.t2, true)
    } else {
        (0.0, false)
    };

    let outcome = StepOutcome {
        observation: mc_encode(next),
        reward,
        terminal,
        truncated: false,
    };
    (next, outcome)
}

/// Draw an initial state for the given mode.
pub fn mc_reset(mode: ResetMode, rng: &mut dyn RngCore) -> MCState {
    let (xr, vr) = match mode {
        ResetMode::TrainPhase1 => (X_MIN..X_MAX, V_MIN..V_MAX),
        ResetMode::TrainPhase2 => (0.4..0.5, 0.0..V_MAX),
        ResetMode::Eval => (-0.2..-0.1, -0.01..0.01),
    };
    MCState::new(rng.random_range(xr), rng.random_range(vr))
}

/// Observation encoding: both coordinates scaled to [-1, 1].
pub fn mc_encode(s: MCState) -> Array1<f32> {
    array![
        (((s.position + 0.3) / 0.9) as f32),
        ((s.velocity / V_MAX) as f32)
    ]
}

/// Stateless MountainCar environment value.
#[derive(Clone, Copy, Debug, Default)]
pub struct MountainCar {
    pub params: McParams,
}

impl LocaEnv for MountainCar {
    type State = MCState;

    fn n_actions(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn episode_cap(&self) -> u32 {
        self.params.episode_cap
    }

    fn transition(&self, s: MCState, action: usize, phase: Phase) -> (MCState, f64, bool) {
        let (next, out) = mc_step(s, action as i32 - 1, phase, &self.params);
        (next, out.reward, out.terminal)
    }

    fn sample_reset(&self, mode: ResetMode, rng: &mut dyn RngCore) -> MCState {
        mc_reset(mode, rng)
    }

    fn encode(&self, s: MCState) -> Array1<f32> {
        mc_encode(s)
    }

    fn encode_batch(&self, states: &[MCState]) -> EncodedBatch {
        let mut m = Array2::zeros((states.len(), 2));
        for (r, s) in states.iter().enumerate() {
            let o = mc_encode(*s);
            m[[r, 0]] = o[0];
            m[[r, 1]] = o[1];
        }
        EncodedBatch::Dense(m)
    }

    fn hist_point(&self, s: MCState) -> (f64, f64) {
        (s.position, s.velocity)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> McParams {
        McParams::default()
    }

    #[test]
    fn zone_membership_boundaries() {
        assert!(mc_in_t1_zone(MCState::new(0.45, 0.03)));
        assert!(!mc_in_t1_zone(MCState::new(0.39, 0.03)));
        assert!(!mc_in_t1_zone(MCState::new(0.45, -0.001)));
        assert!(mc_in_t1_zone(MCState::new(0.4, 0.0)));
        assert!(mc_in_t1_zone(MCState::new(0.5, 0.07)));
    }

    #[test]
    fn exit_into_t1_terminates_with_phase_reward() {
        // From the top of the zone with full throttle the raw successor has
        // x > 0.5 and v > 0, which is T1.
        let s = MCState::new(0.49, 0.065);
        let (next, out) = mc_step(s, 1, Phase::A, &params());
        assert!(next.position > 0.5 && next.velocity > 0.0);
        assert!(out.terminal);
        assert_eq!(out.reward, 4.0);
        let (_, out_b) = mc_step(s, 1, Phase::B, &params());
        assert_eq!(out_b.reward, 1.0);
    }

    #[test]
    fn one_way_exit_attempt_is_rejected() {
        // Decelerating from low positive velocity sends the raw successor
        // below v = 0, out of the zone: the step must hold the state.
        let s = MCState::new(0.45, 0.001);
        let (next, out) = mc_step(s, -1, Phase::A, &params());
        assert_eq!(next, s);
        assert!(!out.terminal);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn t2_is_terminal_in_both_phases() {
        // Coasting near the valley floor lands inside the T2 ellipse.
        let s = MCState::new(-0.525, 0.004);
        let (next, out_a) = mc_step(s, 0, Phase::A, &params());
        assert!(at_t2(next), "landed at {next:?}");
        assert!(out_a.terminal);
        assert_eq!(out_a.reward, 2.0);
        let (_, out_b) = mc_step(s, 0, Phase::B, &params());
        assert_eq!(out_b.reward, 2.0);
    }

    #[test]
    fn reset_modes_cover_their_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            let s = mc_reset(ResetMode::Eval, &mut rng);
            assert!((-0.2..=-0.1).contains(&s.position));
            assert!((-0.01..=0.01).contains(&s.velocity));
            let s = mc_reset(ResetMode::TrainPhase2, &mut rng);
            assert!(mc_in_t1_zone(s));
        }
    }

    #[test]
    fn phase1_reset_mean_is_near_box_midpoint() {
        // Uniform on [-1.2, 0.6]: mean -0.3, sd 1.8/sqrt(12); with 1e4
        // draws the sample mean should sit within 3 sigma of the midpoint.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| mc_reset(ResetMode::TrainPhase1, &mut rng).position)
            .sum::<f64>()
            / n as f64;
        let sigma = (1.8 / 12f64.sqrt()) / (n as f64).sqrt();
        assert!((mean + 0.3).abs() < 3.0 * sigma, "mean {mean}");
    }

    #[test]
    fn dynamics_are_deterministic() {
        let s = MCState::new(-0.4, 0.02);
        let a = mc_step(s, 1, Phase::B, &params());
        let b = mc_step(s, 1, Phase::B, &params());
        assert_eq!(a.0, b.0);
        assert_eq!(a.1.reward, b.1.reward);
    }

    #[test]
    fn one_way_invariant_under_random_zone_steps() {
        // From any zone state, a step ends inside the zone or at T1.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1_000_000 {
            let s = mc_reset(ResetMode::TrainPhase2, &mut rng);
            let a = rng.random_range(-1..=1);
            let (next, out) = mc_step(s, a, Phase::B, &params());
            assert!(
                mc_in_t1_zone(next) || (out.terminal && at_t1(next)),
                "escaped zone: {s:?} -> {next:?}"
            );
        }
    }

    #[test]
    fn nonzero_reward_only_on_terminal_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = mc_reset(ResetMode::TrainPhase1, &mut rng);
        for _ in 0..20_000 {
            let a = rng.random_range(-1..=1);
            let (next, out) = mc_step(s, a, Phase::A, &params());
            if out.reward != 0.0 {
                assert!(out.terminal);
            }
            s = if out.terminal {
                mc_reset(ResetMode::TrainPhase1, &mut rng)
            } else {
                next
            };
        }
    }
}
