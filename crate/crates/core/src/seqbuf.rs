//! Sequence-oriented local forgetting for recurrent-model training data.
//!
//! Two coupled stores: a *state-buffer* curated like the flat
//! local-forgetting buffer (bounded by capacity `B`), and a
//! *trajectory-buffer* holding the observed trajectories. Every inserted
//! transition is appended to its episode's trajectory and its start state
//! is entered into the state-buffer. When a state is evicted from the
//! state-buffer, the reward of its trajectory slot is replaced by `None`,
//! meaning that slot no longer anchors or contributes reward loss.
//!
//! A slot whose previous `N - 1` positions (same episode) hold no
//! state-buffer-referenced slot can never appear in a sampled sequence and
//! is physically removed. This keeps two bounds: at most `N - 1`
//! consecutive `None` rewards per episode, and at most `B * N` live slots
//! in total. Episodes are stored as ring segments whose fronts compact
//! lazily as pruned slots accumulate.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};

use crate::error::{CoreError, Result};
use crate::replay::LofoParams;

/// Incoming sample for the sequence buffer.
#[derive(Clone, Debug)]
pub struct SeqTransition<S> {
    pub obs: S,
    pub action: u8,
    pub reward: f64,
    pub embedding: Box<[f32]>,
}

/// Slot payload in the trajectory buffer. `referenced` tracks whether the
/// state-buffer still points here; it is true exactly when `reward` is
/// `Some`.
#[derive(Clone, Debug)]
pub struct Slot<S> {
    pub obs: S,
    pub action: u8,
    pub reward: Option<f64>,
    pub referenced: bool,
}

/// Address of a trajectory slot: episode id plus absolute position within
/// that episode (positions never shift, even as fronts compact).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SlotRef {
    pub episode: u32,
    pub pos: u64,
}

#[derive(Clone, Debug)]
struct SbEntry {
    embedding: Box<[f32]>,
    tick: u64,
    slot: SlotRef,
}

/// Locality-curated start states. Bounded by `capacity`; the oldest entry
/// in an over-threshold neighbourhood is evicted first, and the globally
/// oldest entry goes when the capacity itself is exceeded.
#[derive(Clone, Debug)]
pub struct StateBuffer {
    entries: Vec<SbEntry>,
    params: LofoParams,
    radius_sq: f32,
    capacity: usize,
    next_tick: u64,
}

impl StateBuffer {
    fn new(params: LofoParams, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::InvalidParam(
                "state-buffer capacity must be >= 1".into(),
            ));
        }
        let r = params.d_local as f32;
        Ok(StateBuffer {
            entries: Vec::new(),
            params,
            radius_sq: r * r,
            capacity,
            next_tick: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn neighborhood_oldest(&self, e: &[f32]) -> (usize, Option<usize>) {
        let mut count = 0;
        let mut oldest: Option<(usize, u64)> = None;
        for (i, entry) in self.entries.iter().enumerate() {
            let mut d2 = 0.0f32;
            for k in 0..e.len() {
                let d = entry.embedding[k] - e[k];
                d2 += d * d;
            }
            if d2 < self.radius_sq {
                count += 1;
                if oldest.map_or(true, |(_, t)| entry.tick < t) {
                    oldest = Some((i, entry.tick));
                }
            }
        }
        (count, oldest.map(|(i, _)| i))
    }

    fn globally_oldest(&self) -> Option<usize> {
        self.entries
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| e.tick)
            .map(|(i, _)| i)
    }
}

#[derive(Clone, Debug)]
struct EpisodeSeg<S> {
    base: u64,
    cells: std::collections::VecDeque<Option<Slot<S>>>,
    live: usize,
}

impl<S> EpisodeSeg<S> {
    fn end(&self) -> u64 {
        self.base + self.cells.len() as u64
    }

    fn get(&self, pos: u64) -> Option<&Slot<S>> {
        if pos < self.base || pos >= self.end() {
            return None;
        }
        self.cells[(pos - self.base) as usize].as_ref()
    }

    fn get_mut(&mut self, pos: u64) -> Option<&mut Slot<S>> {
        if pos < self.base || pos >= self.end() {
            return None;
        }
        self.cells[(pos - self.base) as usize].as_mut()
    }

    fn compact_front(&mut self) {
        while matches!(self.cells.front(), Some(None)) {
            self.cells.pop_front();
            self.base += 1;
        }
    }
}

/// Ordered trajectory slots grouped by episode.
#[derive(Clone, Debug)]
pub struct TrajectoryBuffer<S> {
    episodes: BTreeMap<u32, EpisodeSeg<S>>,
    seq_len: usize,
    live: usize,
}

impl<S> TrajectoryBuffer<S> {
    fn new(seq_len: usize) -> Result<Self> {
        if seq_len == 0 {
            return Err(CoreError::InvalidParam("sequence length must be >= 1".into()));
        }
        Ok(TrajectoryBuffer {
            episodes: BTreeMap::new(),
            seq_len,
            live: 0,
        })
    }

    pub fn seq_len(&self) -> usize {
        self.seq_len
    }

    /// Number of live (not pruned) slots.
    pub fn live_slots(&self) -> usize {
        self.live
    }

    fn append(&mut self, episode: u32, slot: Slot<S>) -> SlotRef {
        let seg = self.episodes.entry(episode).or_insert_with(|| EpisodeSeg {
            base: 0,
            cells: std::collections::VecDeque::new(),
            live: 0,
        });
        let pos = seg.end();
        seg.cells.push_back(Some(slot));
        seg.live += 1;
        self.live += 1;
        SlotRef { episode, pos }
    }

    fn mask(&mut self, r: SlotRef) {
        let seg = self.episodes.get_mut(&r.episode).expect("episode exists");
        let slot = seg.get_mut(r.pos).expect("masked slot is live");
        slot.reward = None;
        slot.referenced = false;
    }

    /// Remove every slot whose reward is `None` and whose backward window
    /// of `seq_len` positions (itself included) holds no referenced slot.
    fn prune_episode(&mut self, episode: u32) {
        let n = self.seq_len as u64;
        let Some(seg) = self.episodes.get_mut(&episode) else {
            return;
        };
        let mut last_referenced: Option<u64> = None;
        let mut removed = 0usize;
        for offset in 0..seg.cells.len() {
            let pos = seg.base + offset as u64;
            let cell = &mut seg.cells[offset];
            match cell {
                Some(slot) if slot.referenced => last_referenced = Some(pos),
                Some(slot) if slot.reward.is_none() => {
                    let covered = last_referenced.map_or(false, |r| pos - r < n);
                    if !covered {
                        *cell = None;
                        removed += 1;
                    }
                }
                _ => {}
            }
        }
        seg.live -= removed;
        self.live -= removed;
        seg.compact_front();
        if seg.live == 0 {
            self.episodes.remove(&episode);
        }
    }

    pub fn get(&self, r: SlotRef) -> Option<&Slot<S>> {
        self.episodes.get(&r.episode).and_then(|seg| seg.get(r.pos))
    }

    /// Newline-delimited slot listing for invariant auditing.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, seg) in &self.episodes {
            for offset in 0..seg.cells.len() {
                let pos = seg.base + offset as u64;
                match &seg.cells[offset] {
                    Some(slot) => {
                        let reward = match slot.reward {
                            Some(r) => format!("{r}"),
                            None => "None".into(),
                        };
                        out.push_str(&format!(
                            "ep={id} pos={pos} action={} reward={reward} referenced={}\n",
                            slot.action, slot.referenced
                        ));
                    }
                    None => out.push_str(&format!("ep={id} pos={pos} pruned\n")),
                }
            }
        }
        out
    }
}

/// One sampled slot; `obs` is `None` past the episode end (mask
/// termination). Masked slots carry reward 0 and `reward_valid == false`,
/// so they contribute nothing to a reward loss.
#[derive(Clone, Debug)]
pub struct MaskedSlot<S> {
    pub obs: Option<S>,
    pub action: Option<u8>,
    pub reward: f64,
    pub reward_valid: bool,
}

/// `seq_len` consecutive slots starting at a state-buffer entry.
#[derive(Clone, Debug)]
pub struct MaskedSequence<S> {
    pub slots: Vec<MaskedSlot<S>>,
}

/// The paired buffers.
#[derive(Clone, Debug)]
pub struct SequenceBuffer<S> {
    sb: StateBuffer,
    tb: TrajectoryBuffer<S>,
    current_episode: u32,
    started: bool,
}

/// What an insert did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SeqInsertReport {
    /// State-buffer eviction caused by a full neighbourhood.
    pub neighborhood_eviction: bool,
    /// State-buffer evictions caused by the capacity bound.
    pub capacity_evictions: usize,
}

impl<S: Clone> SequenceBuffer<S> {
    /// `params` control the locality rule, `capacity` bounds the
    /// state-buffer (B), `seq_len` is the sample-sequence length (N).
    pub fn new(params: LofoParams, capacity: usize, seq_len: usize) -> Result<Self> {
        Ok(SequenceBuffer {
            sb: StateBuffer::new(params, capacity)?,
            tb: TrajectoryBuffer::new(seq_len)?,
            current_episode: 0,
            started: false,
        })
    }

    pub fn state_buffer(&self) -> &StateBuffer {
        &self.sb
    }

    pub fn trajectory_buffer(&self) -> &TrajectoryBuffer<S> {
        &self.tb
    }

    /// Append a transition to the current episode (or a fresh one), add its
    /// state to the state-buffer, apply the local-forgetting rule, then
    /// prune.
    pub fn insert(&mut self, t: SeqTransition<S>, new_episode: bool) -> Result<SeqInsertReport> {
        if new_episode || !self.started {
            if self.started {
                self.current_episode += 1;
            }
            self.started = true;
        }
        let episode = self.current_episode;
        let mut report = SeqInsertReport::default();

        let slot = Slot {
            obs: t.obs,
            action: t.action,
            reward: Some(t.reward),
            referenced: true,
        };
        let slot_ref = self.tb.append(episode, slot);

        let (count, oldest) = self.sb.neighborhood_oldest(&t.embedding);
        let mut touched: Vec<u32> = Vec::new();
        if count >= self.sb.params.n_local {
            let idx = oldest.expect("nonempty neighbourhood");
            let evicted = self.sb.entries.swap_remove(idx);
            self.tb.mask(evicted.slot);
            touched.push(evicted.slot.episode);
            report.neighborhood_eviction = true;
        }

        self.sb.entries.push(SbEntry {
            embedding: t.embedding,
            tick: self.sb.next_tick,
            slot: slot_ref,
        });
        self.sb.next_tick += 1;

        while self.sb.entries.len() > self.sb.capacity {
            let idx = self.sb.globally_oldest().expect("buffer nonempty");
            let evicted = self.sb.entries.swap_remove(idx);
            self.tb.mask(evicted.slot);
            touched.push(evicted.slot.episode);
            report.capacity_evictions += 1;
        }

        touched.sort_unstable();
        touched.dedup();
        for ep in touched {
            self.tb.prune_episode(ep);
        }
        Ok(report)
    }

    /// Sample a masked sequence: a uniform start state from the
    /// state-buffer, then `seq_len` consecutive slots, mask-terminated at
    /// the episode end.
    pub fn sample(&self, rng: &mut dyn RngCore) -> Result<MaskedSequence<S>> {
        if self.sb.entries.is_empty() {
            return Err(CoreError::EmptyBuffer);
        }
        let entry = &self.sb.entries[rng.random_range(0..self.sb.entries.len())];
        Ok(self.sequence_from(entry.slot))
    }

    fn sequence_from(&self, start: SlotRef) -> MaskedSequence<S> {
        let n = self.tb.seq_len;
        let mut slots = Vec::with_capacity(n);
        let seg = self.tb.episodes.get(&start.episode);
        for i in 0..n {
            let pos = start.pos + i as u64;
            let slot = seg.and_then(|s| s.get(pos));
            match slot {
                Some(s) => slots.push(MaskedSlot {
                    obs: Some(s.obs.clone()),
                    action: Some(s.action),
                    reward: s.reward.unwrap_or(0.0),
                    reward_valid: s.reward.is_some(),
                }),
                None => break,
            }
        }
        while slots.len() < n {
            slots.push(MaskedSlot {
                obs: None,
                action: None,
                reward: 0.0,
                reward_valid: false,
            });
        }
        MaskedSequence { slots }
    }

    /// Full invariant audit; returns a description of the first violation.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let n = self.tb.seq_len as u64;
        let b = self.sb.capacity;

        if self.sb.entries.len() > b {
            return Err(format!("state-buffer holds {} > B = {b}", self.sb.entries.len()));
        }
        if self.tb.live_slots() > b * self.tb.seq_len {
            return Err(format!(
                "live slots {} exceed B*N = {}",
                self.tb.live_slots(),
                b * self.tb.seq_len
            ));
        }
        for entry in &self.sb.entries {
            match self.tb.get(entry.slot) {
                Some(slot) if slot.reward.is_some() && slot.referenced => {}
                Some(_) => return Err(format!("entry {:?} points at a masked slot", entry.slot)),
                None => return Err(format!("entry {:?} points at a pruned slot", entry.slot)),
            }
        }
        for (id, seg) in &self.tb.episodes {
            let mut live_none_run = 0u64;
            let mut last_referenced: Option<u64> = None;
            for offset in 0..seg.cells.len() {
                let pos = seg.base + offset as u64;
                match &seg.cells[offset] {
                    Some(slot) => {
                        if slot.referenced != slot.reward.is_some() {
                            return Err(format!("ep {id} pos {pos}: referenced/reward disagree"));
                        }
                        if slot.referenced {
                            last_referenced = Some(pos);
                            live_none_run = 0;
                        } else {
                            live_none_run += 1;
                            if live_none_run >= n {
                                return Err(format!(
                                    "ep {id}: {live_none_run} consecutive None rewards at pos {pos}"
                                ));
                            }
                            let covered = last_referenced.map_or(false, |r| pos - r < n);
                            if !covered {
                                return Err(format!("ep {id} pos {pos}: uncovered live slot"));
                            }
                        }
                    }
                    None => {
                        live_none_run = 0;
                    }
                }
            }
        }
        Ok(())
    }
}
