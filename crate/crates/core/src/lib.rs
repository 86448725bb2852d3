//! Record, synchronize, learn from and replay multi-device sensor sessions.
//!
//! The crate follows one pipeline:
//!
//! 1. [`synthgen`] produces one [`logfmt::SensorLog`] per device, with a
//!    transmitter (TX) sending a sync pulse every few hundred frames and the
//!    receivers (RX) logging when they saw it.
//! 2. [`syncer`] matches the pulses and shifts every RX stream into the TX
//!    timebase, giving a single channels × timesteps [`syncer::AlignedMatrix`].
//! 3. [`dataset`] cuts the matrix into (32-frame input, 96-frame target)
//!    windows and exports matrices in the NPY format ([`npy`]).
//! 4. [`model`] trains a single-layer LSTM with a linear head and stores it in a
//!    compact weight file.
//! 5. [`rtengine`] runs the model behind a wait-free audio callback, and
//!    [`schedsim`] reproduces the resulting audio/worker thread interplay tick
//!    by tick.
//!
//! The guide under `book/` walks through each stage with runnable snippets.

pub mod dataset;
pub mod logfmt;
pub mod model;
pub mod npy;
pub mod rtengine;
pub mod schedsim;
pub mod syncer;
pub mod synthgen;

mod bytes;
