//! 8x8 grid world with a heading, two terminal target cells and a 2x2
//! one-way zone in the top-left corner.
//!
//! States are (col, row, dir) with dir in N/E/S/W order, 256 states in
//! total. T1 occupies the top-left cell, T2 the bottom-right cell; both
//! are absorbing. Forward moves that would exit the T1-zone from inside
//! are blocked, as are moves off the grid.

use ndarray::{Array1, Array2};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::{LocaEnv, Phase, ResetMode, RewardScheme, StepOutcome};
use crate::nn::EncodedBatch;

pub const GRID_SIZE: u8 = 8;
const T1: (u8, u8) = (0, 0);
const T2: (u8, u8) = (7, 7);
/// Pixels per cell in the coarse-image encoding.
const CELL_PX: usize = 3;
const IMG: usize = GRID_SIZE as usize * CELL_PX;

/// Agent pose. `dir`: 0 = north, 1 = east, 2 = south, 3 = west.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct GridState {
    pub col: u8,
    pub row: u8,
    pub dir: u8,
}

impl GridState {
    pub fn new(col: u8, row: u8, dir: u8) -> Self {
        debug_assert!(col < GRID_SIZE && row < GRID_SIZE && dir < 4);
        GridState { col, row, dir }
    }
}

/// Dense state index in [0, 256).
pub fn state_index(s: GridState) -> usize {
    ((s.row as usize * GRID_SIZE as usize) + s.col as usize) * 4 + s.dir as usize
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridEncoding {
    /// 256-dimensional indicator of the state index.
    OneHot,
    /// Flattened 3x24x24 render: red agent triangle, green targets.
    CoarseImage,
}

#[derive(Clone, Copy, Debug)]
pub struct GridParams {
    pub rewards: RewardScheme,
    pub episode_cap: u32,
    pub encoding: GridEncoding,
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            rewards: RewardScheme::default(),
            episode_cap: 100,
            encoding: GridEncoding::OneHot,
        }
    }
}

pub fn is_terminal_cell(col: u8, row: u8) -> bool {
    (col, row) == T1 || (col, row) == T2
}

/// The 2x2 top-left zone (contains T1).
pub fn in_t1_zone(col: u8, row: u8) -> bool {
    col < 2 && row < 2
}

fn forward_delta(dir: u8) -> (i8, i8) {
    match dir {
        0 => (0, -1),
        1 => (1, 0),
        2 => (0, 1),
        _ => (-1, 0),
    }
}

/// One deterministic step. Actions: 0 = forward, 1 = turn left,
/// 2 = turn right.
pub fn grid_step(
    state: GridState,
    action: usize,
    phase: Phase,
    params: &GridParams,
) -> (GridState, StepOutcome) {
    assert!(action < 3, "action must be 0 (forward), 1 (left) or 2 (right)");
    let mut next = state;
    let mut reward = 0.0;
    let mut terminal = false;

    if is_terminal_cell(state.col, state.row) {
        // Absorbing: target cells never transition anywhere.
        terminal = true;
    } else {
        match action {
            1 => next.dir = (state.dir + 3) % 4,
            2 => next.dir = (state.dir + 1) % 4,
            _ => {
                let (dc, dr) = forward_delta(state.dir);
                let nc = state.col as i16 + dc as i16;
                let nr = state.row as i16 + dr as i16;
                let inside = (0..GRID_SIZE as i16).contains(&nc) && (0..GRID_SIZE as i16).contains(&nr);
                if inside {
                    let (nc, nr) = (nc as u8, nr as u8);
                    let blocked =
                        in_t1_zone(state.col, state.row) && !in_t1_zone(nc, nr);
                    if !blocked {
                        next.col = nc;
                        next.row = nr;
                        if (nc, nr) == T1 {
                            reward = params.rewards.t1(phase);
                            terminal = true;
                        } else if (nc, nr) == T2 {
                            reward = params.rewards.t2;
                            terminal = true;
                        }
                    }
                }
            }
        }
    }

    let outcome = StepOutcome {
        observation: grid_encode(next, params.encoding),
        reward,
        terminal,
        truncated: false,
    };
    (next, outcome)
}

/// All 256 states in index order.
pub fn all_states() -> Vec<GridState> {
    let mut out = Vec::with_capacity(256);
    for row in 0..GRID_SIZE {
        for col in 0..GRID_SIZE {
            for dir in 0..4 {
                out.push(GridState::new(col, row, dir));
            }
        }
    }
    out
}

/// The 248 states whose cell is not a target.
pub fn non_terminal_states() -> Vec<GridState> {
    all_states()
        .into_iter()
        .filter(|s| !is_terminal_cell(s.col, s.row))
        .collect()
}

/// Non-terminal states inside the T1-zone (12 states).
pub fn zone_states() -> Vec<GridState> {
    non_terminal_states()
        .into_iter()
        .filter(|s| in_t1_zone(s.col, s.row))
        .collect()
}

/// Draw an initial state. Training phase 1 and evaluation draw uniformly
/// over all non-terminal states; training phase 2 only inside the zone.
pub fn grid_reset(mode: ResetMode, rng: &mut dyn RngCore) -> GridState {
    let pool = match mode {
        ResetMode::TrainPhase2 => zone_states(),
        _ => non_terminal_states(),
    };
    pool[rng.random_range(0..pool.len())]
}

/// Encode a state under the chosen scheme.
pub fn grid_encode(state: GridState, scheme: GridEncoding) -> Array1<f32> {
    match scheme {
        GridEncoding::OneHot => {
            let mut v = Array1::zeros(256);
            v[state_index(state)] = 1.0;
            v
        }
        GridEncoding::CoarseImage => {
            let mut img = vec![0.0f32; 3 * IMG * IMG];
            let mut put = |c: usize, x: usize, y: usize, v: f32| {
                img[c * IMG * IMG + y * IMG + x] = v;
            };
            for &(col, row) in &[T1, T2] {
                for dy in 0..CELL_PX {
                    for dx in 0..CELL_PX {
                        put(1, col as usize * CELL_PX + dx, row as usize * CELL_PX + dy, 1.0);
                    }
                }
            }
            // Red triangle pointing along the heading.
            let tri: [(usize, usize); 3] = match state.dir {
                0 => [(1, 0), (0, 2), (2, 2)],
                1 => [(2, 1), (0, 0), (0, 2)],
                2 => [(1, 2), (0, 0), (2, 0)],
                _ => [(0, 1), (2, 0), (2, 2)],
            };
            for (dx, dy) in tri {
                put(
                    0,
                    state.col as usize * CELL_PX + dx,
                    state.row as usize * CELL_PX + dy,
                    1.0,
                );
            }
            Array1::from_vec(img)
        }
    }
}

/// Stateless grid environment value.
#[derive(Clone, Copy, Debug, Default)]
pub struct MiniGrid {
    pub params: GridParams,
}

impl LocaEnv for MiniGrid {
    type State = GridState;

    fn n_actions(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        match self.params.encoding {
            GridEncoding::OneHot => 256,
            GridEncoding::CoarseImage => 3 * IMG * IMG,
        }
    }


    fn episode_cap(&self) -> u32 {
        self.params.episode_cap
    }

    fn transition(&self, s: GridState, action: usize, phase: Phase) -> (GridState, f64, bool) {
        let (next, out) = grid_step(s, action, phase, &self.params);
        (next, out.reward, out.terminal)
    }

    fn sample_reset(&self, mode: ResetMode, rng: &mut dyn RngCore) -> GridState {
        grid_reset(mode, rng)
    }

    fn encode(&self, s: GridState) -> Array1<f32> {
        grid_encode(s, self.params.encoding)
    }

    fn encode_batch(&self, states: &[GridState]) -> EncodedBatch {
        match self.params.encoding {
            GridEncoding::OneHot => EncodedBatch::OneHot {
                indices: states.iter().map(|&s| state_index(s)).collect(),
                dim: 256,
            },
            GridEncoding::CoarseImage => {
                let dim = self.obs_dim();
                let mut m = Array2::zeros((states.len(), dim));
                for (r, &s) in states.iter().enumerate() {
                    m.row_mut(r)
                        .assign(&grid_encode(s, GridEncoding::CoarseImage));
                }
                EncodedBatch::Dense(m)
            }
        }
    }

    fn hist_point(&self, s: GridState) -> (f64, f64) {
        (s.col as f64, s.row as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> GridParams {
        GridParams::default()
    }

    #[test]
    fn state_count_is_256() {
        assert_eq!(all_states().len(), 256);
        assert_eq!(non_terminal_states().len(), 248);
        assert_eq!(zone_states().len(), 12);
    }

    #[test]
    fn forward_into_t1_pays_phase_reward() {
        // (1, 0) facing west is one forward move from T1.
        let s = GridState::new(1, 0, 3);
        let (next, out) = grid_step(s, 0, Phase::B, &params());
        assert_eq!((next.col, next.row), (0, 0));
        assert!(out.terminal);
        assert_eq!(out.reward, 1.0);
        let (_, out_a) = grid_step(s, 0, Phase::A, &params());
        assert_eq!(out_a.reward, 4.0);
    }

    #[test]
    fn forward_into_t2_pays_2_in_both_phases() {
        let s = GridState::new(6, 7, 1);
        for phase in [Phase::A, Phase::B] {
            let (next, out) = grid_step(s, 0, phase, &params());
            assert_eq!((next.col, next.row), (7, 7));
            assert!(out.terminal);
            assert_eq!(out.reward, 2.0);
        }
    }

    #[test]
    fn turn_left_then_right_restores_state() {
        for s in non_terminal_states() {
            let (l, _) = grid_step(s, 1, Phase::A, &params());
            let (back, _) = grid_step(l, 2, Phase::A, &params());
            assert_eq!(back, s);
        }
    }

    #[test]
    fn forward_into_wall_is_a_no_op() {
        let s = GridState::new(7, 3, 1); // facing east at the east wall
        let (next, out) = grid_step(s, 0, Phase::A, &params());
        assert_eq!(next, s);
        assert_eq!(out.reward, 0.0);
        assert!(!out.terminal);
    }

    #[test]
    fn one_way_zone_is_inescapable_exhaustively() {
        // Every action from every zone state stays in the zone or ends at T1.
        for s in zone_states() {
            for action in 0..3 {
                let (next, out) = grid_step(s, action, Phase::B, &params());
                assert!(
                    in_t1_zone(next.col, next.row),
                    "escaped zone: {s:?} action {action} -> {next:?}"
                );
                if (next.col, next.row) == (0, 0) {
                    assert!(out.terminal);
                }
            }
        }
    }

    #[test]
    fn onehot_encoding_indexes_correctly() {
        let v = grid_encode(GridState::new(0, 0, 0), GridEncoding::OneHot);
        assert_eq!(v[0], 1.0);
        assert_eq!(v.sum(), 1.0);
        let a = grid_encode(GridState::new(3, 2, 1), GridEncoding::OneHot);
        let b = grid_encode(GridState::new(3, 2, 2), GridEncoding::OneHot);
        let dist = (&a - &b).mapv(|x| x * x).sum().sqrt();
        assert!((dist - 2f32.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn coarse_image_has_green_maximum_at_top_left_quadrant() {
        // Only targets are green; T1 sits in the top-left quadrant.
        let img = grid_encode(GridState::new(4, 4, 0), GridEncoding::CoarseImage);
        let green = |x: usize, y: usize| img[IMG * IMG + y * IMG + x];
        let mut best = (0usize, 0usize, -1.0f32);
        for y in 0..IMG {
            for x in 0..IMG {
                if green(x, y) > best.2 {
                    best = (x, y, green(x, y));
                }
            }
        }
        assert!(best.0 < IMG / 2 && best.1 < IMG / 2, "max at {best:?}");
        assert_eq!(best.2, 1.0);
    }

    #[test]
    fn resets_respect_mode_supports() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let s = grid_reset(ResetMode::TrainPhase2, &mut rng);
            assert!(in_t1_zone(s.col, s.row));
            assert!(!is_terminal_cell(s.col, s.row));
            let s = grid_reset(ResetMode::TrainPhase1, &mut rng);
            assert!(!is_terminal_cell(s.col, s.row));
        }
    }

    #[test]
    fn eval_resets_reach_all_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut seen = [false; 4];
        for _ in 0..10_000 {
            let s = grid_reset(ResetMode::Eval, &mut rng);
            seen[s.dir as usize] = true;
        }
        assert!(seen.iter().all(|&b| b));
    }

    #[test]
    fn rewards_appear_only_on_terminal_steps() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = params();
        let mut s = grid_reset(ResetMode::TrainPhase1, &mut rng);
        for _ in 0..20_000 {
            let a = rng.random_range(0..3);
            let (next, out) = grid_step(s, a, Phase::B, &p);
            if out.reward != 0.0 {
                assert!(out.terminal);
            }
            s = if out.terminal {
                grid_reset(ResetMode::TrainPhase1, &mut rng)
            } else {
                next
            };
        }
    }
}
