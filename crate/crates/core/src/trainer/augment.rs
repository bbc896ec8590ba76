//! Class balancing by time-shifted copies of the rare class.

use crate::buffer::BufferEntry;
use crate::signal::{Window, WindowSource};

/// Shift step between successive copies.
pub const SHIFT_STEP_S: f64 = 0.125;
/// Copies per window before falling back to plain repetition.
pub const MAX_SHIFTS: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct Augmented {
    pub entries: Vec<BufferEntry>,
    /// Set when one class is absent and nothing could be balanced.
    pub single_class: bool,
    /// Copies cut from the raw stream rather than rotated in place.
    pub recut: usize,
    pub shifted: usize,
    pub repeated: usize,
}

/// Grows the seizure class until it is at least as large as the other.
///
/// For each shift `k = 1..=7` every seizure window gets a copy moved `k/8` s
/// later, in that order, stopping as soon as the classes balance. After all
/// seven shifts the seizure windows gathered so far are repeated round-robin.
/// Copies are re-cut from `source` when it still holds the raw signal around
/// the window, otherwise the window is rotated circularly. Entries are never
/// removed and labels never change.
pub fn augment(entries: &[BufferEntry], source: Option<&dyn WindowSource>) -> Augmented {
    let n_normal = entries.iter().filter(|e| e.label == 0).count();
    let seizures: Vec<&BufferEntry> = entries.iter().filter(|e| e.label == 1).collect();
    let mut out = Augmented { entries: entries.to_vec(), single_class: false, recut: 0, shifted: 0, repeated: 0 };
    if seizures.is_empty() || n_normal == 0 {
        out.single_class = true;
        return out;
    }
    let mut n_seizure = seizures.len();
    let mut pool: Vec<BufferEntry> = seizures.iter().map(|&e| e.clone()).collect();
    'shifts: for k in 1..=MAX_SHIFTS {
        for e in &seizures {
            if n_seizure >= n_normal {
                break 'shifts;
            }
            let offset = k as f64 * SHIFT_STEP_S;
            let window = match source.and_then(|s| recut(s, &e.window, offset)) {
                Some(w) => {
                    out.recut += 1;
                    w
                }
                None => rotate(&e.window, offset),
            };
            let copy = BufferEntry { window, label: 1, insert_step: e.insert_step };
            pool.push(copy.clone());
            out.entries.push(copy);
            out.shifted += 1;
            n_seizure += 1;
        }
    }
    let mut i = 0;
    while n_seizure < n_normal {
        out.entries.push(pool[i % pool.len()].clone());
        out.repeated += 1;
        n_seizure += 1;
        i += 1;
    }
    out
}

/// Raw-signal shift, only when the source window at this index is the buffered one.
fn recut(source: &dyn WindowSource, w: &Window, offset_s: f64) -> Option<Window> {
    if w.index >= source.len() {
        return None;
    }
    let span = source.span(w.index);
    if (span.start_s - w.start_time_s).abs() > 1e-9 || (span.end_s - span.start_s - w.duration_s).abs() > 1e-9 {
        return None;
    }
    let shifted = source.shifted(w.index, offset_s)?;
    (shifted.data.len() == w.data.len()).then_some(shifted)
}

fn rotate(w: &Window, offset_s: f64) -> Window {
    let rate = w.samples() as f64 / w.duration_s;
    w.circular_shift((offset_s * rate).round() as usize)
}
