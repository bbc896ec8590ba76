//! Fixed-capacity replay buffer with priority retention for the rare class.
//!
//! Half the capacity is nominally reserved for each class, but the split is
//! soft: seizure windows are always admitted, displacing a uniformly random
//! non-seizure entry when the buffer is full, and non-seizure windows may use
//! whatever room the seizure half leaves empty. A seizure entry is evicted
//! only when the buffer holds nothing else.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::signal::Window;

/// One hour of windows at a one-second stride.
pub const DEFAULT_CAPACITY: usize = 3600;

#[derive(Debug, Clone, PartialEq)]
pub struct BufferEntry {
    pub window: Window,
    pub label: u8,
    /// Position in the buffer's insertion sequence, starting at 0.
    pub insert_step: u64,
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    normal: Vec<BufferEntry>,
    seizure: Vec<BufferEntry>,
    next_step: u64,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::config("buffer capacity must be at least 1"));
        }
        Ok(Self { capacity, normal: Vec::new(), seizure: Vec::new(), next_step: 0, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn seizure_quota(&self) -> usize {
        self.capacity / 2
    }

    pub fn len(&self) -> usize {
        self.normal.len() + self.seizure.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(non-seizure, seizure)` entry counts.
    pub fn class_counts(&self) -> (usize, usize) {
        (self.normal.len(), self.seizure.len())
    }

    /// Stores a labeled window and returns whatever had to be evicted for it.
    pub fn insert(&mut self, window: Window, label: u8) -> Result<Vec<BufferEntry>> {
        if label > 1 {
            return Err(Error::input(format!("label must be 0 or 1, got {label}")));
        }
        let mut evicted = Vec::new();
        if self.len() >= self.capacity {
            let victim = if !self.normal.is_empty() {
                let i = self.rng.gen_range(0..self.normal.len());
                self.normal.swap_remove(i)
            } else {
                let i = self.rng.gen_range(0..self.seizure.len());
                self.seizure.swap_remove(i)
            };
            evicted.push(victim);
        }
        let entry = BufferEntry { window, label, insert_step: self.next_step };
        self.next_step += 1;
        if label == 1 {
            self.seizure.push(entry);
        } else {
            self.normal.push(entry);
        }
        Ok(evicted)
    }

    /// All entries in insertion order.
    pub fn snapshot(&self) -> Vec<BufferEntry> {
        let mut out: Vec<BufferEntry> = self.normal.iter().chain(&self.seizure).cloned().collect();
        out.sort_by_key(|e| e.insert_step);
        out
    }

    /// Borrowing view of all entries, unordered.
    pub fn iter(&self) -> impl Iterator<Item = &BufferEntry> {
        self.normal.iter().chain(&self.seizure)
    }

    /// Writes one JSON object per entry; window samples are included only on request.
    pub fn dump_jsonl<W: Write>(&self, mut out: W, with_payload: bool) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            insert_step: u64,
            label: u8,
            start_time_s: f64,
            #[serde(skip_serializing_if = "Option::is_none")]
            data: Option<&'a [f32]>,
        }
        for e in self.snapshot() {
            let line = Line {
                insert_step: e.insert_step,
                label: e.label,
                start_time_s: e.window.start_time_s,
                data: with_payload.then_some(e.window.data.as_slice()),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}
