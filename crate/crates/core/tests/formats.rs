//! Binary formats against committed fixtures and across round trips.

use sensorpipe::dataset::{make_windows, WindowSpec};
use sensorpipe::logfmt::{parse_log, read_log, write_log, LogHeader, Role, SensorLog, SyncEvent};
use sensorpipe::model::weights::parse_weights;
use sensorpipe::model::{save_weights, train, LstmParams, ModelBundle, ModelConfig, TrainHyper};
use sensorpipe::synthgen::{generate_session, SessionConfig};

/// Assembled field by field with Python's `struct` module, independently of
/// the writer.
const REFERENCE: &[u8] = include_bytes!("fixtures/reference.bslog");

fn reference_log() -> SensorLog {
    let header = LogHeader {
        device_id: 3,
        role: Role::Rx,
        sample_rate_hz: 22050.0,
        channel_labels: vec!["a".into(), "s2".into()],
        pulse_period_frames: 2,
        session_id: 0x0102_0304_0506_0708,
    };
    SensorLog::new(
        header,
        vec![vec![0.0, 0.5, -1.0, 1.0], vec![0.25, -0.25, 2.0, -0.0]],
        vec![SyncEvent {
            pulse_index: 0,
            frame_index: 2,
        }],
    )
    .unwrap()
}

#[test]
fn writer_reproduces_the_fixture() {
    let mut out = Vec::new();
    assert_eq!(write_log(&reference_log(), &mut out).unwrap(), 107);
    assert_eq!(out, REFERENCE);
}

#[test]
fn reader_decodes_the_fixture() {
    let log = read_log(REFERENCE).unwrap();
    assert_eq!(log, reference_log());
    assert_eq!(log.channel(1)[3].to_bits(), (-0.0f32).to_bits());
}

#[test]
fn generated_session_logs_round_trip() {
    let (logs, _) = generate_session(&SessionConfig::pendulum()).unwrap();
    for log in &logs {
        let mut bytes = Vec::new();
        write_log(log, &mut bytes).unwrap();
        let back = parse_log(&bytes).unwrap();
        assert_eq!(&back, log);
        let mut again = Vec::new();
        write_log(&back, &mut again).unwrap();
        assert_eq!(again, bytes);
    }
}

#[test]
fn trained_weights_round_trip_bit_identical() {
    let (logs, _) = generate_session(&SessionConfig::pendulum()).unwrap();
    let matrix = sensorpipe::syncer::synchronize(&logs).unwrap();
    let ds = make_windows(&matrix.data, &WindowSpec::default()).unwrap().slice(0..40);
    let config = ModelConfig::default();
    let hyper = TrainHyper {
        epochs: 2,
        ..TrainHyper::default()
    };
    let params = train(&ds, &config, &hyper).unwrap().params.to_f32();
    assert_ne!(params, LstmParams::init(&config, 0).to_f32());
    let bundle = ModelBundle::new(config, params, ds.input_stats.clone(), ds.target_stats).unwrap();

    let mut bytes = Vec::new();
    save_weights(&bundle, &mut bytes).unwrap();
    let back = parse_weights(&bytes).unwrap();
    let bits = |b: &ModelBundle| -> Vec<u32> { b.params.tensors().iter().flat_map(|t| t.iter().map(|v| v.to_bits())).collect() };
    assert_eq!(bits(&back), bits(&bundle));
    assert_eq!(back, bundle);
    let mut again = Vec::new();
    save_weights(&back, &mut again).unwrap();
    assert_eq!(again, bytes);
}
