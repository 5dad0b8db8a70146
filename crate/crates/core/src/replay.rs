//! Bounded replay buffers differing only in eviction policy.
//!
//! * [`FifoBuffer`] removes the globally oldest sample once full.
//! * [`ReservoirBuffer`] keeps a uniform sample of everything seen
//!   (Algorithm R).
//! * [`LofoBuffer`] removes the oldest sample *within the local
//!   neighbourhood* of the incoming sample, where locality is measured by
//!   L2 distance between cached state embeddings. Neighbourhood membership
//!   uses the strict inequality `d < D_local`; the scan is a plain linear
//!   pass over the buffer.
//!
//! Buffers assign a monotone `tick` to every accepted sample; "oldest"
//! always means minimum tick. Every insert returns the displaced sample,
//! if any, so size accounting stays exact: `len == inserts - evictions`.

use std::collections::VecDeque;

use rand::{Rng, RngCore};

use crate::error::{CoreError, Result};

/// One stored environment step. `embedding` caches the embedding of
/// `state`'s observation at insertion time; only the local-forgetting
/// buffer requires it. `tick` is assigned by the buffer on insert.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition<S> {
    pub state: S,
    pub action: u8,
    pub reward: f32,
    pub next_state: S,
    pub terminal: bool,
    pub tick: u64,
    pub embedding: Option<Box<[f32]>>,
}

impl<S> Transition<S> {
    pub fn new(state: S, action: u8, reward: f32, next_state: S, terminal: bool) -> Self {
        Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
            tick: 0,
            embedding: None,
        }
    }

    pub fn with_embedding(mut self, e: Box<[f32]>) -> Self {
        self.embedding = Some(e);
        self
    }
}

/// Local-forgetting parameters: neighbourhood radius in embedding space
/// and the per-neighbourhood sample cap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LofoParams {
    pub d_local: f64,
    pub n_local: usize,
}

impl LofoParams {
    pub fn new(d_local: f64, n_local: usize) -> Result<Self> {
        if !(d_local > 0.0) {
            return Err(CoreError::InvalidParam(format!(
                "d_local must be > 0, got {d_local}"
            )));
        }
        if n_local == 0 {
            return Err(CoreError::InvalidParam("n_local must be >= 1".into()));
        }
        Ok(LofoParams { d_local, n_local })
    }
}

/// Size accounting counters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferStats {
    pub size: usize,
    pub inserts: u64,
    pub evictions: u64,
}

fn draw_indices(len: usize, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(CoreError::EmptyBuffer);
    }
    Ok((0..k).map(|_| rng.random_range(0..len)).collect())
}

// ---------------------------------------------------------------------------
// FIFO

#[derive(Clone, Debug)]
pub struct FifoBuffer<S> {
    items: VecDeque<Transition<S>>,
    capacity: usize,
    inserts: u64,
    evictions: u64,
    next_tick: u64,
}

impl<S> FifoBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::InvalidParam("fifo capacity must be >= 1".into()));
        }
        Ok(FifoBuffer {
            items: VecDeque::new(),
            capacity,
            inserts: 0,
            evictions: 0,
            next_tick: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// At capacity, the minimum-tick sample is evicted before appending.
    pub fn insert(&mut self, mut t: Transition<S>) -> Option<Transition<S>> {
        t.tick = self.next_tick;
        self.next_tick += 1;
        self.inserts += 1;
        let evicted = if self.items.len() == self.capacity {
            self.evictions += 1;
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(t);
        evicted
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition<S> {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.items.iter()
    }

    pub fn stats(&self) -> BufferStats {
        BufferStats {
            size: self.items.len(),
            inserts: self.inserts,
            evictions: self.evictions,
        }
    }

    pub fn sample_indices(&self, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        draw_indices(self.items.len(), k, rng)
    }
}

// ---------------------------------------------------------------------------
// Reservoir (Algorithm R)

#[derive(Clone, Debug)]
pub struct ReservoirBuffer<S> {
    items: Vec<Transition<S>>,
    capacity: usize,
    inserts: u64,
    evictions: u64,
    next_tick: u64,
}

impl<S> ReservoirBuffer<S> {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(CoreError::InvalidParam(
                "reservoir capacity must be >= 1".into(),
            ));
        }
        Ok(ReservoirBuffer {
            items: Vec::new(),
            capacity,
            inserts: 0,
            evictions: 0,
            next_tick: 0,
        })
    }

    /// Algorithm R: the first `capacity` samples are kept; the k-th sample
    /// thereafter replaces a uniformly random slot with probability
    /// capacity/k, else it is discarded (and returned as the eviction).
    pub fn insert(&mut self, mut t: Transition<S>, rng: &mut dyn RngCore) -> Option<Transition<S>> {
        t.tick = self.next_tick;
        self.next_tick += 1;
        self.inserts += 1;
        if self.items.len() < self.capacity {
            self.items.push(t);
            return None;
        }
        self.evictions += 1;
        let j = rng.random_range(0..self.inserts as usize);
        if j < self.capacity {
            Some(std::mem::replace(&mut self.items[j], t))
        } else {
            Some(t)
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition<S> {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.items.iter()
    }

    pub fn stats(&self) -> BufferStats {
        BufferStats {
            size: self.items.len(),
            inserts: self.inserts,
            evictions: self.evictions,
        }
    }

    pub fn sample_indices(&self, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        draw_indices(self.items.len(), k, rng)
    }
}

// ---------------------------------------------------------------------------
// LoFo

#[derive(Clone, Debug)]
pub struct LofoBuffer<S> {
    items: Vec<Transition<S>>,
    /// Flat copy of the cached embeddings, `dim` floats per item, kept in
    /// lockstep with `items` for a cache-friendly scan.
    flat: Vec<f32>,
    dim: Option<usize>,
    params: LofoParams,
    radius_sq: f32,
    inserts: u64,
    evictions: u64,
    next_tick: u64,
}

impl<S> LofoBuffer<S> {
    pub fn new(params: LofoParams) -> Result<Self> {
        let params = LofoParams::new(params.d_local, params.n_local)?;
        let r = params.d_local as f32;
        Ok(LofoBuffer {
            items: Vec::new(),
            flat: Vec::new(),
            dim: None,
            params,
            radius_sq: r * r,
            inserts: 0,
            evictions: 0,
            next_tick: 0,
        })
    }

    pub fn params(&self) -> LofoParams {
        self.params
    }

    fn check_width(&self, e: &[f32]) -> Result<()> {
        match self.dim {
            Some(d) if d != e.len() => Err(CoreError::EmbeddingWidth {
                stored: d,
                query: e.len(),
            }),
            _ => Ok(()),
        }
    }

    /// Indices of stored samples whose embedding lies strictly within
    /// `d_local` of `e`.
    pub fn neighborhood(&self, e: &[f32]) -> Result<Vec<usize>> {
        self.check_width(e)?;
        let dim = e.len();
        let mut out = Vec::new();
        for (i, chunk) in self.flat.chunks_exact(dim).enumerate() {
            if dist_sq(chunk, e) < self.radius_sq {
                out.push(i);
            }
        }
        Ok(out)
    }

    /// Insert with local forgetting: if the incoming sample's neighbourhood
    /// already holds at least `n_local` samples, exactly one — the oldest
    /// member of that neighbourhood — is evicted first.
    pub fn insert(&mut self, mut t: Transition<S>) -> Result<Option<Transition<S>>> {
        let e = t.embedding.as_ref().ok_or(CoreError::MissingEmbedding)?;
        self.check_width(e)?;
        let dim = e.len();
        self.dim.get_or_insert(dim);

        // Fused scan: neighbourhood count and its oldest member.
        let mut count = 0usize;
        let mut oldest: Option<(usize, u64)> = None;
        for (i, chunk) in self.flat.chunks_exact(dim).enumerate() {
            if dist_sq(chunk, e) < self.radius_sq {
                count += 1;
                let tick = self.items[i].tick;
                if oldest.map_or(true, |(_, best)| tick < best) {
                    oldest = Some((i, tick));
                }
            }
        }

        let evicted = if count >= self.params.n_local {
            let (idx, _) = oldest.expect("nonempty neighbourhood");
            self.evictions += 1;
            Some(self.swap_remove(idx))
        } else {
            None
        };

        t.tick = self.next_tick;
        self.next_tick += 1;
        self.inserts += 1;
        self.flat.extend_from_slice(t.embedding.as_ref().unwrap());
        self.items.push(t);
        Ok(evicted)
    }

    fn swap_remove(&mut self, idx: usize) -> Transition<S> {
        let dim = self.dim.expect("dim set before first removal");
        let last = self.items.len() - 1;
        if idx != last {
            let (head, tail) = self.flat.split_at_mut(last * dim);
            head[idx * dim..(idx + 1) * dim].copy_from_slice(&tail[..dim]);
        }
        self.flat.truncate(last * dim);
        self.items.swap_remove(idx)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition<S> {
        &self.items[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition<S>> {
        self.items.iter()
    }

    pub fn stats(&self) -> BufferStats {
        BufferStats {
            size: self.items.len(),
            inserts: self.inserts,
            evictions: self.evictions,
        }
    }

    pub fn sample_indices(&self, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        draw_indices(self.items.len(), k, rng)
    }

    #[cfg(test)]
    fn stage_raw(&mut self, t: Transition<S>) {
        let e = t.embedding.as_ref().expect("staged transition has embedding");
        self.dim.get_or_insert(e.len());
        self.flat.extend_from_slice(e);
        self.items.push(Transition {
            tick: self.next_tick,
            ..t
        });
        self.next_tick += 1;
        self.inserts += 1;
    }
}

#[inline]
fn dist_sq(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0.0f32;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

// ---------------------------------------------------------------------------
// Uniform front-end over the three policies

#[derive(Clone, Debug)]
pub enum AnyBuffer<S> {
    Fifo(FifoBuffer<S>),
    Reservoir(ReservoirBuffer<S>),
    Lofo(LofoBuffer<S>),
}

impl<S> AnyBuffer<S> {
    /// Local-forgetting buffers need a cached embedding on every insert.
    pub fn needs_embedding(&self) -> bool {
        matches!(self, AnyBuffer::Lofo(_))
    }

    pub fn insert(
        &mut self,
        t: Transition<S>,
        rng: &mut dyn RngCore,
    ) -> Result<Option<Transition<S>>> {
        match self {
            AnyBuffer::Fifo(b) => Ok(b.insert(t)),
            AnyBuffer::Reservoir(b) => Ok(b.insert(t, rng)),
            AnyBuffer::Lofo(b) => b.insert(t),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            AnyBuffer::Fifo(b) => b.len(),
            AnyBuffer::Reservoir(b) => b.len(),
            AnyBuffer::Lofo(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> &Transition<S> {
        match self {
            AnyBuffer::Fifo(b) => b.get(i),
            AnyBuffer::Reservoir(b) => b.get(i),
            AnyBuffer::Lofo(b) => b.get(i),
        }
    }

    pub fn iter(&self) -> Box<dyn Iterator<Item = &Transition<S>> + '_> {
        match self {
            AnyBuffer::Fifo(b) => Box::new(b.iter()),
            AnyBuffer::Reservoir(b) => Box::new(b.iter()),
            AnyBuffer::Lofo(b) => Box::new(b.iter()),
        }
    }

    pub fn stats(&self) -> BufferStats {
        match self {
            AnyBuffer::Fifo(b) => b.stats(),
            AnyBuffer::Reservoir(b) => b.stats(),
            AnyBuffer::Lofo(b) => b.stats(),
        }
    }

    /// Uniform-with-replacement batch of stored indices.
    pub fn sample_indices(&self, k: usize, rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        draw_indices(self.len(), k, rng)
    }
}

/// Newline-delimited record dump for offline analysis: one line per
/// stored transition, in storage order.
pub fn dump_records<'a, S: std::fmt::Debug + 'a>(
    transitions: impl Iterator<Item = &'a Transition<S>>,
) -> String {
    let mut out = String::new();
    for t in transitions {
        let embedding = match &t.embedding {
            Some(e) => format!(
                "[{}]",
                e.iter()
                    .map(|v| format!("{v}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            ),
            None => "none".into(),
        };
        out.push_str(&format!(
            "tick={} state={:?} action={} reward={} next={:?} terminal={} embedding={embedding}\n",
            t.tick, t.state, t.action, t.reward, t.next_state, t.terminal
        ));
    }
    out
}
