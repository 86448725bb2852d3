//! Synchronizer output checked against the generator's ground truth.

use proptest::prelude::*;

use sensorpipe::syncer::{estimate_offsets, source_frames, synchronize};
use sensorpipe::synthgen::{generate_channel, generate_session, GroundTruth, SessionConfig, SignalSpec};

/// Device 0 is the TX board and defines time, so its offset is forced to 0.
fn session(n_devices: usize, mut offsets: Vec<u64>, jitter: u64, seed: u64) -> SessionConfig {
    offsets[0] = 0;
    SessionConfig {
        n_devices,
        channels_per_device: 1,
        n_frames: 6000,
        sample_rate_hz: 1000.0,
        pulse_period_frames: 700,
        n_pulses: None,
        start_offset_frames: offsets,
        drift_ppm: vec![0.0; n_devices],
        pulse_jitter_frames: jitter,
        signals: vec![SignalSpec::WhiteNoise { amplitude: 1.0 }],
        seed,
    }
}

/// Largest distance between the frame each aligned column was taken from
/// and the frame the generator says records that instant.
fn worst_deviation(config: &SessionConfig) -> i64 {
    let (logs, truth) = generate_session(config).unwrap();
    let solution = estimate_offsets(&logs).unwrap();
    let (start, end) = solution.overlap;
    assert!(end - start > 1000, "overlap {start}..{end}");
    let mut worst = 0;
    for (d, (log, alignment)) in logs.iter().zip(&solution.devices).enumerate() {
        let (sources, _) = source_frames(log, alignment, solution.overlap).unwrap();
        for (i, &s) in sources.iter().enumerate() {
            let expected = truth.local_frame(d, start + i as i64);
            worst = worst.max((s as i64 - expected).abs());
        }
    }
    worst
}

fn assert_values_exact(config: &SessionConfig, truth: &GroundTruth) {
    let (logs, _) = generate_session(config).unwrap();
    let matrix = synchronize(&logs).unwrap();
    for d in 0..config.n_devices {
        let raw = generate_channel(config, d, 0);
        for (i, &v) in matrix.data[d].iter().enumerate() {
            let f = truth.local_frame(d, matrix.start_frame + i as i64) as usize;
            assert_eq!(v.to_bits(), raw[f].to_bits(), "device {d} column {i}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn aligned_frames_stay_within_jitter(
        n_devices in 2usize..=4,
        offsets in proptest::collection::vec(0u64..=1000, 4),
        jitter in 0u64..=2,
        seed in any::<u64>(),
    ) {
        let cfg = session(n_devices, offsets[..n_devices].to_vec(), jitter, seed);
        let worst = worst_deviation(&cfg);
        prop_assert!(worst <= jitter as i64, "deviation {} with jitter {}", worst, jitter);
    }

    #[test]
    fn jitter_free_alignment_reproduces_samples_exactly(
        n_devices in 2usize..=4,
        offsets in proptest::collection::vec(0u64..=1000, 4),
        seed in any::<u64>(),
    ) {
        let cfg = session(n_devices, offsets[..n_devices].to_vec(), 0, seed);
        let (_, truth) = generate_session(&cfg).unwrap();
        assert_values_exact(&cfg, &truth);
    }

    #[test]
    fn device_order_does_not_change_the_result(
        offsets in proptest::collection::vec(0u64..=1000, 4),
        jitter in 0u64..=2,
        seed in any::<u64>(),
        rotate in 0usize..4,
    ) {
        let cfg = session(4, offsets, jitter, seed);
        let (logs, _) = generate_session(&cfg).unwrap();
        let reference = synchronize(&logs).unwrap();
        let mut shuffled = logs.clone();
        shuffled.rotate_left(rotate);
        let m = synchronize(&shuffled).unwrap();
        prop_assert_eq!(m.start_frame, reference.start_frame);
        for (row, label) in m.data.iter().zip(&m.row_labels) {
            let i = reference.row_labels.iter().position(|l| l == label).unwrap();
            prop_assert_eq!(row, &reference.data[i]);
        }
    }

    #[test]
    fn source_frames_never_go_backwards(
        offsets in proptest::collection::vec(0u64..=1000, 3),
        jitter in 0u64..=3,
        seed in any::<u64>(),
    ) {
        let cfg = session(3, offsets, jitter, seed);
        let (logs, _) = generate_session(&cfg).unwrap();
        let solution = estimate_offsets(&logs).unwrap();
        for (log, alignment) in logs.iter().zip(&solution.devices) {
            let (sources, diag) = source_frames(log, alignment, solution.overlap).unwrap();
            let repeats = sources.windows(2).filter(|w| w[1] == w[0]).count();
            prop_assert!(sources.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(repeats <= diag.gap_fills);
        }
    }
}

#[test]
fn drifting_clock_stays_within_one_pulse_step() {
    let cfg = SessionConfig {
        drift_ppm: vec![0.0, 150.0],
        ..session(2, vec![0, 400], 0, 3)
    };
    let (logs, truth) = generate_session(&cfg).unwrap();
    let solution = estimate_offsets(&logs).unwrap();
    let step = solution.devices[1].max_offset_step;
    assert!(step >= 1);
    let (sources, _) = source_frames(&logs[1], &solution.devices[1], solution.overlap).unwrap();
    for (i, &s) in sources.iter().enumerate() {
        let expected = truth.local_frame(1, solution.overlap.0 + i as i64);
        assert!((s as i64 - expected).abs() <= step, "column {i}: {s} vs {expected}");
    }
}
