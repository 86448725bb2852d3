//! Hand-off of complete prediction windows from the worker to the audio
//! callback.
//!
//! Three buffers rotate between the writer's back buffer, a shared middle
//! buffer and the reader's front buffer. Publishing swaps back and middle;
//! the reader swaps middle and front when the middle one is fresh. Each side
//! only ever touches the buffer it owns, so a window is always seen whole, and
//! neither side waits for the other.

use std::sync::atomic::{AtomicU32, AtomicU64, AtomicU8, Ordering};
use std::sync::Arc;

const FRESH: u8 = 0b100;
const INDEX: u8 = 0b011;

struct Slot {
    values: Box<[AtomicU32]>,
    /// Absolute frame at which the window starts.
    stamp: AtomicU64,
}

struct Shared {
    slots: [Slot; 3],
    middle: AtomicU8,
}

pub fn prediction_slots(len: usize) -> (SlotWriter, SlotReader) {
    let slot = || Slot {
        values: (0..len).map(|_| AtomicU32::new(0)).collect(),
        stamp: AtomicU64::new(0),
    };
    let shared = Arc::new(Shared {
        slots: [slot(), slot(), slot()],
        middle: AtomicU8::new(1),
    });
    (
        SlotWriter {
            shared: shared.clone(),
            back: 0,
        },
        SlotReader {
            shared,
            front: 2,
            has_data: false,
        },
    )
}

pub struct SlotWriter {
    shared: Arc<Shared>,
    back: u8,
}

impl SlotWriter {
    /// Copies `window` into the back buffer and makes it the freshest one.
    pub fn publish(&mut self, window: &[f32], stamp: u64) {
        let slot = &self.shared.slots[self.back as usize];
        for (dst, src) in slot.values.iter().zip(window) {
            dst.store(src.to_bits(), Ordering::Relaxed);
        }
        slot.stamp.store(stamp, Ordering::Relaxed);
        let prev = self.shared.middle.swap(self.back | FRESH, Ordering::AcqRel);
        self.back = prev & INDEX;
    }
}

pub struct SlotReader {
    shared: Arc<Shared>,
    front: u8,
    has_data: bool,
}

impl SlotReader {
    /// Switches to the freshest published window, if a newer one exists.
    /// Returns whether it switched.
    pub fn refresh(&mut self) -> bool {
        if self.shared.middle.load(Ordering::Relaxed) & FRESH == 0 {
            return false;
        }
        let prev = self.shared.middle.swap(self.front, Ordering::AcqRel);
        self.front = prev & INDEX;
        self.has_data = true;
        true
    }

    /// Whether anything has been published yet.
    pub fn has_data(&self) -> bool {
        self.has_data
    }

    pub fn stamp(&self) -> u64 {
        self.shared.slots[self.front as usize].stamp.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.shared.slots[0].values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample `i` of the current front window.
    pub fn get(&self, i: usize) -> f32 {
        f32::from_bits(self.shared.slots[self.front as usize].values[i].load(Ordering::Relaxed))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reader_sees_latest_publication() {
        let (mut w, mut r) = prediction_slots(2);
        assert!(!r.refresh());
        assert!(!r.has_data());
        w.publish(&[1.0, 1.0], 10);
        w.publish(&[2.0, 2.0], 20);
        assert!(r.refresh());
        assert_eq!((r.get(0), r.get(1), r.stamp()), (2.0, 2.0, 20));
        assert!(!r.refresh());
        w.publish(&[3.0, 3.0], 30);
        assert!(r.refresh());
        assert_eq!(r.stamp(), 30);
        assert_eq!(r.get(1), 3.0);
    }
}
