use sensorpipe::schedsim::{parse_csv, render_gantt, simulate, sweep, to_csv, EventKind, SimConfig, SweepRanges, SweepRow};

#[test]
fn reference_chart_matches_golden_file() {
    let trace = simulate(&SimConfig::REFERENCE).unwrap();
    assert_eq!(render_gantt(&trace), include_str!("golden/reference_gantt.txt"));
}

#[test]
fn csv_round_trips_across_configs() {
    for tpb in 1..6 {
        for cost in [0, 1, 3, 9] {
            for on in [false, true] {
                let cfg = SimConfig {
                    ticks_per_block: tpb,
                    inference_cost_ticks: cost,
                    inference_on_audio_thread: on,
                    n_blocks: 11,
                    ..SimConfig::REFERENCE
                };
                let trace = simulate(&cfg).unwrap();
                assert_eq!(parse_csv(&to_csv(&trace)).unwrap(), trace);
            }
        }
    }
}

#[test]
fn off_thread_sweep_never_underruns() {
    let ranges = SweepRanges {
        inference_cost_ticks: 1..=4,
        ..SweepRanges::at(&SimConfig::REFERENCE)
    };
    let rows = sweep(&SimConfig::REFERENCE, &ranges).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.underruns == 0 && r.missed_triggers == 0));
}

#[test]
fn on_thread_sweep_underruns_exactly_when_the_block_overflows() {
    let base = SimConfig {
        inference_on_audio_thread: true,
        ..SimConfig::REFERENCE
    };
    let ranges = SweepRanges {
        callback_cost_ticks: 0..=4,
        inference_cost_ticks: 0..=8,
        ticks_per_block: 2..=6,
        trigger_every_blocks: 1..=3,
    };
    let rows = sweep(&base, &ranges).unwrap();
    assert_eq!(rows.len(), 5 * 9 * 5 * 3);
    for r in &rows {
        let c = r.config;
        let trigger_blocks = c.n_blocks / c.trigger_every_blocks;
        let expected = if c.callback_cost_ticks > c.ticks_per_block {
            c.n_blocks
        } else if c.callback_cost_ticks + c.inference_cost_ticks > c.ticks_per_block {
            trigger_blocks
        } else {
            0
        };
        assert_eq!(r.underruns, expected, "{c}");
        assert_eq!(r.inherent_latency_blocks, c.trigger_every_blocks);
    }
}

#[test]
fn single_point_sweep_equals_simulation() {
    let cfg = SimConfig {
        inference_cost_ticks: 7,
        ..SimConfig::REFERENCE
    };
    let rows = sweep(&cfg, &SweepRanges::at(&cfg)).unwrap();
    let trace = simulate(&cfg).unwrap();
    assert_eq!(rows, vec![SweepRow::of(&trace)]);
    assert_eq!(rows[0].missed_triggers, trace.count(EventKind::MissedTrigger));
    assert_eq!(rows[0].max_latency_ticks, Some(10));
}
