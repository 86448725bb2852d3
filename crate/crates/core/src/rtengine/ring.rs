//! Single-producer/single-consumer frame queue that never blocks the
//! producer.
//!
//! When the queue is full the producer overwrites the oldest frame and counts
//! an overflow. The consumer detects frames that were overwritten while it was
//! copying them the way a seqlock reader does: the producer announces each
//! write in `claim` (followed by a release fence) before touching a slot, and
//! the consumer re-reads `claim` after an acquire fence once it has copied.
//! Any frame older than `claim - capacity` may have been clobbered and is
//! reported as dropped instead of returned.
//!
//! Samples are stored as `AtomicU32` bit patterns so concurrent overwrite is
//! a stale value, never undefined behavior.

use std::sync::atomic::{fence, AtomicU32, AtomicU64, Ordering};
use std::sync::Arc;

struct Shared {
    slots: Box<[AtomicU32]>,
    capacity: u64,
    channels: usize,
    /// Index + 1 of the frame the producer is about to write.
    claim: AtomicU64,
    /// Number of frames fully written.
    head: AtomicU64,
    /// Consumer read position, published for overflow accounting.
    tail: AtomicU64,
    overflows: AtomicU64,
}

/// Creates a queue holding `capacity_frames` frames of `channels` samples.
pub fn ring_buffer(capacity_frames: usize, channels: usize) -> (Producer, Consumer) {
    assert!(capacity_frames > 0 && channels > 0, "ring buffer needs a non-zero size");
    let slots = (0..capacity_frames * channels).map(|_| AtomicU32::new(0)).collect();
    let shared = Arc::new(Shared {
        slots,
        capacity: capacity_frames as u64,
        channels,
        claim: AtomicU64::new(0),
        head: AtomicU64::new(0),
        tail: AtomicU64::new(0),
        overflows: AtomicU64::new(0),
    });
    (
        Producer {
            shared: shared.clone(),
            head: 0,
        },
        Consumer {
            shared,
            read: 0,
            dropped: 0,
        },
    )
}

pub struct Producer {
    shared: Arc<Shared>,
    head: u64,
}

impl Producer {
    /// Appends one frame. Wait-free; overwrites the oldest frame when full.
    ///
    /// `frame` must hold exactly `channels` samples; extra samples are
    /// ignored and missing ones are written as zero.
    pub fn push_frame(&mut self, frame: &[f32]) {
        let s = &*self.shared;
        let w = self.head;
        if w - s.tail.load(Ordering::Relaxed) >= s.capacity {
            s.overflows.fetch_add(1, Ordering::Relaxed);
        }
        s.claim.store(w + 1, Ordering::Relaxed);
        fence(Ordering::Release);
        let base = (w % s.capacity) as usize * s.channels;
        for c in 0..s.channels {
            let v = frame.get(c).copied().unwrap_or(0.0);
            s.slots[base + c].store(v.to_bits(), Ordering::Relaxed);
        }
        self.head = w + 1;
        s.head.store(self.head, Ordering::Release);
    }

    /// Frames pushed so far.
    pub fn position(&self) -> u64 {
        self.head
    }

    pub fn overflows(&self) -> u64 {
        self.shared.overflows.load(Ordering::Relaxed)
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity as usize
    }

    pub fn channels(&self) -> usize {
        self.shared.channels
    }
}

/// Result of one [`Consumer::pop_into`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Popped {
    /// Frames written to the front of the output slice.
    pub frames: usize,
    /// Frames lost to overwriting since the previous pop.
    pub dropped: u64,
}

pub struct Consumer {
    shared: Arc<Shared>,
    read: u64,
    dropped: u64,
}

impl Consumer {
    /// Moves up to `out.len() / channels` of the oldest available frames into
    /// `out`, interleaved.
    pub fn pop_into(&mut self, out: &mut [f32]) -> Popped {
        let s = &*self.shared;
        let ch = s.channels;
        let head = s.head.load(Ordering::Acquire);
        let mut dropped = 0;
        if head - self.read > s.capacity {
            dropped += head - s.capacity - self.read;
            self.read = head - s.capacity;
        }
        let n = ((head - self.read) as usize).min(out.len() / ch);
        for i in 0..n {
            let base = ((self.read + i as u64) % s.capacity) as usize * ch;
            for c in 0..ch {
                out[i * ch + c] = f32::from_bits(s.slots[base + c].load(Ordering::Relaxed));
            }
        }

        fence(Ordering::Acquire);
        let claim = s.claim.load(Ordering::Relaxed);
        let safe_from = claim.saturating_sub(s.capacity);
        let clobbered = safe_from.saturating_sub(self.read).min(n as u64) as usize;
        if clobbered > 0 {
            out.copy_within(clobbered * ch..n * ch, 0);
            dropped += clobbered as u64;
        }
        self.read += n as u64;
        s.tail.store(self.read, Ordering::Release);
        self.dropped += dropped;
        Popped {
            frames: n - clobbered,
            dropped,
        }
    }

    /// Index of the next frame this consumer will return.
    pub fn position(&self) -> u64 {
        self.read
    }

    /// Frames pushed but not yet consumed (may exceed capacity when behind).
    pub fn pending(&self) -> u64 {
        self.shared.head.load(Ordering::Acquire) - self.read
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn channels(&self) -> usize {
        self.shared.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_order() {
        let (mut p, mut c) = ring_buffer(4, 2);
        for i in 0..3 {
            p.push_frame(&[i as f32, -(i as f32)]);
        }
        let mut out = [0.0; 8];
        let got = c.pop_into(&mut out);
        assert_eq!(got, Popped { frames: 3, dropped: 0 });
        assert_eq!(&out[..6], &[0.0, -0.0, 1.0, -1.0, 2.0, -2.0]);
        assert_eq!(c.pop_into(&mut out).frames, 0);
    }

    #[test]
    fn overwrite_when_full() {
        let (mut p, mut c) = ring_buffer(3, 1);
        for i in 0..5 {
            p.push_frame(&[i as f32]);
        }
        assert_eq!(p.overflows(), 2);
        let mut out = [0.0; 5];
        let got = c.pop_into(&mut out);
        assert_eq!(got, Popped { frames: 3, dropped: 2 });
        assert_eq!(&out[..3], &[2.0, 3.0, 4.0]);
        assert_eq!(c.position(), 5);
    }

    #[test]
    fn partial_pops_and_wraparound() {
        let (mut p, mut c) = ring_buffer(4, 1);
        let mut next = 0;
        let mut expect = 0;
        let mut out = [0.0; 3];
        for round in 0..50 {
            for _ in 0..(round % 4) {
                p.push_frame(&[next as f32]);
                next += 1;
            }
            let got = c.pop_into(&mut out);
            for v in &out[..got.frames] {
                assert_eq!(*v, expect as f32);
                expect += 1;
            }
        }
        assert_eq!(p.overflows(), 0);
    }
}
