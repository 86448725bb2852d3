//! Tick-level simulation of an audio thread and an inference thread sharing
//! one CPU under fixed-priority preemptive scheduling.
//!
//! Time is counted in ticks, numbered from 1; block `b` (also from 1) covers
//! ticks `(b-1)·T + 1 ..= b·T` for `T = ticks_per_block`.
//!
//! * At the first tick of every block the audio thread becomes ready with
//!   `callback_cost_ticks` of work. Unfinished audio work carries over.
//! * At the last tick of every `trigger_every_blocks`-th block the inference
//!   thread is triggered. It becomes ready on the next tick with
//!   `inference_cost_ticks` of work. A trigger that arrives while the previous
//!   inference is still queued or running is dropped and recorded as
//!   [`EventKind::MissedTrigger`].
//! * Each tick the audio thread runs if it has work; otherwise the inference
//!   thread runs if it has work; otherwise the CPU idles. An inference that
//!   has started and is preempted by audio shows as [`Occupant::AuxSleeping`].
//!
//! With `inference_on_audio_thread` the inference work is instead added to
//! the audio callback of each triggering block, and there is no inference
//! thread. A block underruns when the audio work it demands exceeds
//! `ticks_per_block`.

use std::fmt::{self, Write as _};
use std::ops::RangeInclusive;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("malformed trace CSV, line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimConfig {
    pub ticks_per_block: usize,
    pub n_blocks: usize,
    pub callback_cost_ticks: usize,
    pub inference_cost_ticks: usize,
    pub trigger_every_blocks: usize,
    pub inference_on_audio_thread: bool,
}

impl SimConfig {
    /// The two-thread schedule shown in the reference figure: ticks are a
    /// quarter block, the callback takes one tick and an inference five.
    pub const REFERENCE: SimConfig = SimConfig {
        ticks_per_block: 4,
        n_blocks: 8,
        callback_cost_ticks: 1,
        inference_cost_ticks: 5,
        trigger_every_blocks: 2,
        inference_on_audio_thread: false,
    };

    pub fn validate(&self) -> Result<(), SimError> {
        for (name, v) in [
            ("ticks_per_block", self.ticks_per_block),
            ("n_blocks", self.n_blocks),
            ("trigger_every_blocks", self.trigger_every_blocks),
        ] {
            if v == 0 {
                return Err(SimError::Config(format!("{name} must be positive")));
            }
        }
        self.total_ticks()
            .ok_or_else(|| SimError::Config("trace length overflows".into()))?;
        Ok(())
    }

    fn total_ticks(&self) -> Option<usize> {
        self.ticks_per_block.checked_mul(self.n_blocks)
    }

    fn is_trigger_block(&self, block: usize) -> bool {
        block % self.trigger_every_blocks == 0
    }
}

impl Default for SimConfig {
    fn default() -> Self {
        Self::REFERENCE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Occupant {
    Audio,
    Aux,
    /// Audio runs while a started inference waits to resume.
    AuxSleeping,
    Idle,
}

impl Occupant {
    pub fn as_str(self) -> &'static str {
        match self {
            Occupant::Audio => "Audio",
            Occupant::Aux => "Aux",
            Occupant::AuxSleeping => "AuxSleeping",
            Occupant::Idle => "Idle",
        }
    }

    /// Whether the audio thread holds the CPU.
    pub fn is_audio(self) -> bool {
        matches!(self, Occupant::Audio | Occupant::AuxSleeping)
    }
}

impl FromStr for Occupant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "Audio" => Occupant::Audio,
            "Aux" => Occupant::Aux,
            "AuxSleeping" => Occupant::AuxSleeping,
            "Idle" => Occupant::Idle,
            _ => return Err(format!("unknown occupant {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Trigger,
    InferenceStart,
    InferenceDone,
    Underrun,
    MissedTrigger,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Trigger => "Trigger",
            EventKind::InferenceStart => "InferenceStart",
            EventKind::InferenceDone => "InferenceDone",
            EventKind::Underrun => "Underrun",
            EventKind::MissedTrigger => "MissedTrigger",
        }
    }

    fn symbol(self) -> char {
        match self {
            EventKind::Trigger => 'T',
            EventKind::InferenceStart => 'S',
            EventKind::InferenceDone => 'D',
            EventKind::Underrun => 'U',
            EventKind::MissedTrigger => 'M',
        }
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "Trigger" => EventKind::Trigger,
            "InferenceStart" => EventKind::InferenceStart,
            "InferenceDone" => EventKind::InferenceDone,
            "Underrun" => EventKind::Underrun,
            "MissedTrigger" => EventKind::MissedTrigger,
            _ => return Err(format!("unknown event {s:?}")),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SimEvent {
    pub tick: usize,
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimTrace {
    pub config: SimConfig,
    /// `occupants[t - 1]` is the state of tick `t`.
    pub occupants: Vec<Occupant>,
    /// In time order; events of one tick in the order they happened.
    pub events: Vec<SimEvent>,
}

impl SimTrace {
    pub fn occupant(&self, tick: usize) -> Occupant {
        self.occupants[tick - 1]
    }

    /// Ticks (1-based) whose occupant satisfies `pred`.
    pub fn ticks_where(&self, pred: impl Fn(Occupant) -> bool) -> Vec<usize> {
        (1..=self.occupants.len()).filter(|&t| pred(self.occupant(t))).collect()
    }

    pub fn ticks_of(&self, kind: EventKind) -> Vec<usize> {
        self.events.iter().filter(|e| e.kind == kind).map(|e| e.tick).collect()
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Ticks from each served trigger to the completion of its inference.
    pub fn latencies(&self) -> Vec<usize> {
        let mut pending = None;
        let mut out = Vec::new();
        for e in &self.events {
            match e.kind {
                EventKind::Trigger if pending.is_none() => pending = Some(e.tick),
                EventKind::InferenceDone => {
                    if let Some(t) = pending.take() {
                        out.push(e.tick - t);
                    }
                }
                _ => {}
            }
        }
        out
    }

    pub fn max_latency(&self) -> Option<usize> {
        self.latencies().into_iter().max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Work {
    Callback,
    Inference,
}

struct Task {
    work: Work,
    remaining: usize,
    started: bool,
}

pub fn simulate(config: &SimConfig) -> Result<SimTrace, SimError> {
    config.validate()?;
    let tpb = config.ticks_per_block;
    let total = tpb * config.n_blocks;
    let mut occupants = Vec::with_capacity(total);
    let mut events = Vec::new();
    let mut audio: std::collections::VecDeque<Task> = Default::default();
    // Off-thread inference: (ticks done, ready from tick).
    let mut aux: Option<(usize, usize)> = None;
    let mut block_demand = 0;

    for t in 1..=total {
        let block = (t - 1) / tpb + 1;
        let first = (t - 1) % tpb == 0;
        let last = t % tpb == 0;

        if first {
            block_demand = config.callback_cost_ticks;
            if config.callback_cost_ticks > 0 {
                audio.push_back(Task {
                    work: Work::Callback,
                    remaining: config.callback_cost_ticks,
                    started: false,
                });
            }
            if config.inference_on_audio_thread && config.is_trigger_block(block) {
                block_demand += config.inference_cost_ticks;
                events.push(SimEvent { tick: t, kind: EventKind::Trigger });
                if config.inference_cost_ticks == 0 {
                    events.push(SimEvent { tick: t, kind: EventKind::InferenceStart });
                    events.push(SimEvent { tick: t, kind: EventKind::InferenceDone });
                } else {
                    audio.push_back(Task {
                        work: Work::Inference,
                        remaining: config.inference_cost_ticks,
                        started: false,
                    });
                }
            }
        }

        let aux_in_flight = matches!(aux, Some((done, _)) if done > 0);
        if let Some(task) = audio.front_mut() {
            if task.work == Work::Inference && !task.started {
                events.push(SimEvent { tick: t, kind: EventKind::InferenceStart });
            }
            task.started = true;
            task.remaining -= 1;
            if task.remaining == 0 {
                if task.work == Work::Inference {
                    events.push(SimEvent { tick: t, kind: EventKind::InferenceDone });
                }
                audio.pop_front();
            }
            occupants.push(if aux_in_flight { Occupant::AuxSleeping } else { Occupant::Audio });
        } else if let Some((done, _)) = aux.as_mut().filter(|(_, ready)| *ready <= t) {
            if *done == 0 {
                events.push(SimEvent { tick: t, kind: EventKind::InferenceStart });
            }
            *done += 1;
            if *done == config.inference_cost_ticks {
                events.push(SimEvent { tick: t, kind: EventKind::InferenceDone });
                aux = None;
            }
            occupants.push(Occupant::Aux);
        } else {
            occupants.push(Occupant::Idle);
        }

        if last {
            if block_demand > tpb {
                events.push(SimEvent { tick: t, kind: EventKind::Underrun });
            }
            if !config.inference_on_audio_thread && config.is_trigger_block(block) {
                events.push(SimEvent { tick: t, kind: EventKind::Trigger });
                if aux.is_some() {
                    events.push(SimEvent { tick: t, kind: EventKind::MissedTrigger });
                } else if config.inference_cost_ticks == 0 {
                    events.push(SimEvent { tick: t, kind: EventKind::InferenceStart });
                    events.push(SimEvent { tick: t, kind: EventKind::InferenceDone });
                } else {
                    aux = Some((0, t + 1));
                }
            }
        }
    }

    Ok(SimTrace {
        config: *config,
        occupants,
        events,
    })
}

/// Event symbols in the order they win when several share a tick.
const EVENT_PRECEDENCE: [EventKind; 5] = [
    EventKind::Underrun,
    EventKind::MissedTrigger,
    EventKind::Trigger,
    EventKind::InferenceDone,
    EventKind::InferenceStart,
];

/// Renders the trace as a fixed-width chart, one column per tick.
///
/// ```text
/// block   |1  |2  |…     block boundaries
/// audio   #...           # audio thread running
/// aux     .##~#          # running, ~ preempted mid-inference, . idle
/// events  T S D U M      trigger, start, done, underrun, missed trigger
/// ```
///
/// When several events share a tick, the events row shows the first of
/// `U M T D S`; the CSV form keeps all of them.
pub fn render_gantt(trace: &SimTrace) -> String {
    let tpb = trace.config.ticks_per_block;
    let n = trace.occupants.len();
    let mut block_row = String::with_capacity(n);
    let mut t = 0;
    while t < n {
        let label = format!("|{}", t / tpb + 1);
        let width = tpb.min(n - t);
        if label.len() <= width {
            block_row.push_str(&label);
            block_row.extend(std::iter::repeat_n(' ', width - label.len()));
        } else {
            block_row.push('|');
            block_row.extend(std::iter::repeat_n(' ', width - 1));
        }
        t += tpb;
    }
    let audio: String = trace
        .occupants
        .iter()
        .map(|o| if o.is_audio() { '#' } else { '.' })
        .collect();
    let aux: String = trace
        .occupants
        .iter()
        .map(|o| match o {
            Occupant::Aux => '#',
            Occupant::AuxSleeping => '~',
            _ => '.',
        })
        .collect();
    let mut ev = vec![' '; n];
    for (i, slot) in ev.iter_mut().enumerate() {
        let here: Vec<EventKind> = trace
            .events
            .iter()
            .filter(|e| e.tick == i + 1)
            .map(|e| e.kind)
            .collect();
        if let Some(k) = EVENT_PRECEDENCE.iter().find(|k| here.contains(k)) {
            *slot = k.symbol();
        }
    }
    let events: String = ev.into_iter().collect::<String>().trim_end().to_string();

    let c = &trace.config;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "ticks_per_block={} callback={} inference={} trigger_every={} on_audio_thread={}",
        c.ticks_per_block,
        c.callback_cost_ticks,
        c.inference_cost_ticks,
        c.trigger_every_blocks,
        c.inference_on_audio_thread
    );
    let _ = writeln!(out, "block   {}", block_row.trim_end());
    let _ = writeln!(out, "audio   {audio}");
    if !c.inference_on_audio_thread {
        let _ = writeln!(out, "aux     {aux}");
    }
    let _ = writeln!(out, "events  {events}");
    out.push_str("legend: # running, ~ preempted, . idle; T trigger, S start, D done, U underrun, M missed trigger\n");
    out
}

impl fmt::Display for SimConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ticks_per_block={} n_blocks={} callback_cost_ticks={} inference_cost_ticks={} \
             trigger_every_blocks={} inference_on_audio_thread={}",
            self.ticks_per_block,
            self.n_blocks,
            self.callback_cost_ticks,
            self.inference_cost_ticks,
            self.trigger_every_blocks,
            self.inference_on_audio_thread
        )
    }
}

impl FromStr for SimConfig {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut cfg = SimConfig::REFERENCE;
        let mut seen = 0;
        for field in s.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got {field:?}"))?;
            let num = || value.parse::<usize>().map_err(|e| format!("{key}: {e}"));
            match key {
                "ticks_per_block" => cfg.ticks_per_block = num()?,
                "n_blocks" => cfg.n_blocks = num()?,
                "callback_cost_ticks" => cfg.callback_cost_ticks = num()?,
                "inference_cost_ticks" => cfg.inference_cost_ticks = num()?,
                "trigger_every_blocks" => cfg.trigger_every_blocks = num()?,
                "inference_on_audio_thread" => {
                    cfg.inference_on_audio_thread = value.parse().map_err(|e| format!("{key}: {e}"))?
                }
                _ => return Err(format!("unknown key {key:?}")),
            }
            seen += 1;
        }
        if seen != 6 {
            return Err(format!("expected 6 config fields, got {seen}"));
        }
        Ok(cfg)
    }
}

/// CSV with one row per tick: `tick,occupant,events`, events `;`-separated.
/// The first line is a `#` comment carrying the config.
pub fn to_csv(trace: &SimTrace) -> String {
    let mut out = format!("# {}\ntick,occupant,events\n", trace.config);
    let mut ev = trace.events.iter().peekable();
    for (i, occ) in trace.occupants.iter().enumerate() {
        let tick = i + 1;
        let mut names = Vec::new();
        while let Some(e) = ev.next_if(|e| e.tick == tick) {
            names.push(e.kind.as_str());
        }
        let _ = writeln!(out, "{tick},{},{}", occ.as_str(), names.join(";"));
    }
    out
}

pub fn parse_csv(text: &str) -> Result<SimTrace, SimError> {
    let err = |line: usize, reason: String| SimError::Parse { line, reason };
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (n, first) = lines.next().ok_or_else(|| err(1, "empty input".into()))?;
    let config: SimConfig = first
        .strip_prefix("# ")
        .ok_or_else(|| err(n, "missing config comment".into()))?
        .parse()
        .map_err(|e| err(n, e))?;
    config.validate().map_err(|e| err(n, e.to_string()))?;
    if lines.next().map(|(_, l)| l) != Some("tick,occupant,events") {
        return Err(err(2, "missing column header".into()));
    }
    let mut occupants = Vec::new();
    let mut events = Vec::new();
    for (n, line) in lines {
        let mut cols = line.splitn(3, ',');
        let (Some(tick), Some(occ), Some(evs)) = (cols.next(), cols.next(), cols.next()) else {
            return Err(err(n, "expected 3 columns".into()));
        };
        let tick: usize = tick.parse().map_err(|e| err(n, format!("tick: {e}")))?;
        if tick != occupants.len() + 1 {
            return Err(err(n, format!("expected tick {}, got {tick}", occupants.len() + 1)));
        }
        occupants.push(occ.parse().map_err(|e| err(n, e))?);
        for name in evs.split(';').filter(|s| !s.is_empty()) {
            events.push(SimEvent {
                tick,
                kind: name.parse().map_err(|e| err(n, e))?,
            });
        }
    }
    if Some(occupants.len()) != config.total_ticks() {
        return Err(err(
            text.lines().count(),
            format!("{} ticks for a {}-tick config", occupants.len(), config.ticks_per_block * config.n_blocks),
        ));
    }
    Ok(SimTrace {
        config,
        occupants,
        events,
    })
}

/// Ranges to sweep; every combination is simulated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepRanges {
    pub callback_cost_ticks: RangeInclusive<usize>,
    pub inference_cost_ticks: RangeInclusive<usize>,
    pub ticks_per_block: RangeInclusive<usize>,
    pub trigger_every_blocks: RangeInclusive<usize>,
}

impl SweepRanges {
    /// Single-point ranges at `base`.
    pub fn at(base: &SimConfig) -> Self {
        Self {
            callback_cost_ticks: base.callback_cost_ticks..=base.callback_cost_ticks,
            inference_cost_ticks: base.inference_cost_ticks..=base.inference_cost_ticks,
            ticks_per_block: base.ticks_per_block..=base.ticks_per_block,
            trigger_every_blocks: base.trigger_every_blocks..=base.trigger_every_blocks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepRow {
    pub config: SimConfig,
    pub underruns: usize,
    pub missed_triggers: usize,
    /// Longest trigger-to-completion time in ticks; `None` if no inference
    /// completed.
    pub max_latency_ticks: Option<usize>,
    /// Blocks of input buffered before each inference can start.
    pub inherent_latency_blocks: usize,
}

impl SweepRow {
    pub fn of(trace: &SimTrace) -> Self {
        Self {
            config: trace.config,
            underruns: trace.count(EventKind::Underrun),
            missed_triggers: trace.count(EventKind::MissedTrigger),
            max_latency_ticks: trace.max_latency(),
            inherent_latency_blocks: trace.config.trigger_every_blocks,
        }
    }
}

/// Simulates every combination of `ranges`, keeping `n_blocks` and the
/// thread placement of `base`. Rows are ordered with the callback cost
/// varying slowest and the trigger interval fastest.
pub fn sweep(base: &SimConfig, ranges: &SweepRanges) -> Result<Vec<SweepRow>, SimError> {
    for (name, r) in [
        ("callback_cost_ticks", &ranges.callback_cost_ticks),
        ("inference_cost_ticks", &ranges.inference_cost_ticks),
        ("ticks_per_block", &ranges.ticks_per_block),
        ("trigger_every_blocks", &ranges.trigger_every_blocks),
    ] {
        if r.is_empty() {
            return Err(SimError::Config(format!("empty {name} range {r:?}")));
        }
    }
    let mut rows = Vec::new();
    for callback in ranges.callback_cost_ticks.clone() {
        for inference in ranges.inference_cost_ticks.clone() {
            for tpb in ranges.ticks_per_block.clone() {
                for every in ranges.trigger_every_blocks.clone() {
                    let config = SimConfig {
                        ticks_per_block: tpb,
                        callback_cost_ticks: callback,
                        inference_cost_ticks: inference,
                        trigger_every_blocks: every,
                        ..*base
                    };
                    rows.push(SweepRow::of(&simulate(&config)?));
                }
            }
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(
        "ticks_per_block,n_blocks,callback_cost_ticks,inference_cost_ticks,trigger_every_blocks,\
         inference_on_audio_thread,underruns,missed_triggers,max_latency_ticks,inherent_latency_blocks\n",
    );
    for r in rows {
        let c = &r.config;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            c.ticks_per_block,
            c.n_blocks,
            c.callback_cost_ticks,
            c.inference_cost_ticks,
            c.trigger_every_blocks,
            c.inference_on_audio_thread,
            r.underruns,
            r.missed_triggers,
            r.max_latency_ticks.map_or(String::new(), |l| l.to_string()),
            r.inherent_latency_blocks
        );
    }
    out
}
