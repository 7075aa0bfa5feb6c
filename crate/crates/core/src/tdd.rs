//! Event-driven timeline of the relay's power detector and RF switch.
//!
//! Transmissions are [`TxEvent`]s with exact start times and constant power
//! at the primary antenna. The detector is an ideal comparator with
//! hysteresis; the switch follows it with a pure delay (the reaction time).
//! While the detector is asserted the relay carries `A→B`, otherwise `B→A`.

use std::io::Write;

use thiserror::Error;

use crate::channel::{dbm_to_mw, mw_to_dbm};
use crate::relay::{Direction, RelayConfig, RelayMode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TddError {
    #[error("events are not sorted by start time (event {0})")]
    Unsorted(usize),
    #[error("event {0} has a non-positive or non-finite duration")]
    InvalidDuration(usize),
    #[error("events {0} and {1} from the same source overlap")]
    Overlap(usize, usize),
    #[error("empty detector trace")]
    EmptyTrace,
    #[error("sweep not detected")]
    SweepNotDetected,
    #[error("malformed start pattern: {0}")]
    BadPattern(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Source {
    A,
    B,
    /// Third-party emitter near the primary station.
    Interferer(u16),
}

impl Source {
    /// Relay direction that carries this source's signal.
    pub fn relayed_direction(self) -> Direction {
        match self {
            Source::A | Source::Interferer(_) => Direction::AtoB,
            Source::B => Direction::BtoA,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TxEvent {
    pub source: Source,
    pub start_us: f64,
    pub duration_us: f64,
    pub freq_hz: f64,
    /// Power arriving at the primary relay antenna.
    pub power_dbm: f64,
}

impl TxEvent {
    pub fn end_us(&self) -> f64 {
        self.start_us + self.duration_us
    }
}

/// What happened to one transmission at the relay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventFate {
    Forwarded,
    /// Relayed, but the leading `lost_fraction` was cut by the switch delay.
    Clipped { lost_fraction: f64 },
    /// Never relayed: the detector did not fire for it.
    Ignored,
    /// The switch pointed the other way for `lost_fraction` of the event.
    Lost { lost_fraction: f64 },
}

impl EventFate {
    pub fn lost_fraction(&self) -> f64 {
        match *self {
            EventFate::Forwarded => 0.0,
            EventFate::Ignored => 1.0,
            EventFate::Clipped { lost_fraction } | EventFate::Lost { lost_fraction } => lost_fraction,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            EventFate::Forwarded => "forwarded",
            EventFate::Clipped { .. } => "clipped",
            EventFate::Ignored => "ignored",
            EventFate::Lost { .. } => "lost",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub time_us: f64,
    pub detector: bool,
    pub direction: Direction,
}

/// A contiguous interval with the detector asserted.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pulse {
    pub rise_us: f64,
    pub fall_us: f64,
}

impl Pulse {
    pub fn duration_us(&self) -> f64 {
        self.fall_us - self.rise_us
    }
}

/// Detector output and switch position over time. Each sample holds the
/// state from its time until the next sample.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorTrace {
    pub samples: Vec<TraceSample>,
    pub reaction_delay_us: f64,
    edges: Vec<(f64, bool)>,
    switches: Vec<(f64, Direction)>,
    initial_direction: Direction,
}

impl DetectorTrace {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Detector transitions `(time, asserted)`.
    pub fn detector_edges(&self) -> &[(f64, bool)] {
        &self.edges
    }

    /// Switch transitions `(time, new direction)`.
    pub fn direction_changes(&self) -> &[(f64, Direction)] {
        &self.switches
    }

    pub fn pulses(&self) -> Vec<Pulse> {
        self.edges
            .chunks(2)
            .filter_map(|c| match c {
                [(rise, true), (fall, false)] => Some(Pulse {
                    rise_us: *rise,
                    fall_us: *fall,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn rising_edges(&self) -> Vec<f64> {
        self.edges.iter().filter(|e| e.1).map(|e| e.0).collect()
    }

    pub fn direction_at(&self, t_us: f64) -> Direction {
        self.switches
            .iter()
            .take_while(|(t, _)| *t <= t_us)
            .last()
            .map_or(self.initial_direction, |s| s.1)
    }

    pub fn detector_at(&self, t_us: f64) -> bool {
        self.edges
            .iter()
            .take_while(|(t, _)| *t <= t_us)
            .last()
            .is_some_and(|e| e.1)
    }

    /// `time_us,detector,direction`, one row per sample.
    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["time_us", "detector", "direction"])?;
        for s in &self.samples {
            out.write_record([
                format!("{:.6}", s.time_us),
                u8::from(s.detector).to_string(),
                s.direction.as_str().to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub trace: DetectorTrace,
    /// One fate per input event, same order.
    pub fates: Vec<EventFate>,
}

/// Runs the detector and switch over a time-sorted event list.
pub fn simulate_timeline(events: &[TxEvent], cfg: &RelayConfig) -> Result<Timeline, TddError> {
    validate(events)?;
    let edges = detector_edges(events, cfg);
    let initial_direction = match cfg.mode {
        RelayMode::Bidirectional => Direction::BtoA,
        RelayMode::ForwardOnly => Direction::AtoB,
    };
    let switches: Vec<(f64, Direction)> = match cfg.mode {
        RelayMode::ForwardOnly => Vec::new(),
        RelayMode::Bidirectional => edges
            .iter()
            .map(|&(t, on)| {
                let dir = if on { Direction::AtoB } else { Direction::BtoA };
                (t + cfg.reaction_delay_us, dir)
            })
            .collect(),
    };

    let t0 = events.first().map_or(0.0, |e| e.start_us.min(0.0));
    let mut samples = vec![TraceSample {
        time_us: t0,
        detector: false,
        direction: initial_direction,
    }];
    let mut times: Vec<f64> = edges.iter().map(|e| e.0).chain(switches.iter().map(|s| s.0)).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut trace = DetectorTrace {
        samples: Vec::new(),
        reaction_delay_us: cfg.reaction_delay_us,
        edges,
        switches,
        initial_direction,
    };
    for t in times {
        let sample = TraceSample {
            time_us: t,
            detector: trace.detector_at(t),
            direction: trace.direction_at(t),
        };
        if t <= t0 {
            samples[0] = sample;
        } else {
            samples.push(sample);
        }
    }
    trace.samples = samples;

    let fates = events.iter().map(|e| classify(e, &trace)).collect();
    Ok(Timeline { trace, fates })
}

fn validate(events: &[TxEvent]) -> Result<(), TddError> {
    for (i, e) in events.iter().enumerate() {
        if !(e.duration_us > 0.0) || !e.duration_us.is_finite() || !e.start_us.is_finite() {
            return Err(TddError::InvalidDuration(i));
        }
        if i > 0 && e.start_us < events[i - 1].start_us {
            return Err(TddError::Unsorted(i));
        }
    }
    let mut last_by_source: Vec<(Source, usize)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match last_by_source.iter_mut().find(|(s, _)| *s == e.source) {
            Some((_, prev)) => {
                if events[*prev].end_us() > e.start_us {
                    return Err(TddError::Overlap(*prev, i));
                }
                *prev = i;
            }
            None => last_by_source.push((e.source, i)),
        }
    }
    Ok(())
}

fn detector_edges(events: &[TxEvent], cfg: &RelayConfig) -> Vec<(f64, bool)> {
    let mut bounds: Vec<f64> = events.iter().flat_map(|e| [e.start_us, e.end_us()]).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();

    let release = cfg.release_threshold_dbm();
    let mut edges = Vec::new();
    let mut on = false;
    let mut next = 0;
    let mut active: Vec<usize> = Vec::new();
    for &t in &bounds {
        active.retain(|&i| events[i].end_us() > t);
        while next < events.len() && events[next].start_us <= t {
            if events[next].end_us() > t {
                active.push(next);
            }
            next += 1;
        }
        let mw: f64 = active.iter().map(|&i| dbm_to_mw(events[i].power_dbm)).sum();
        let dbm = if mw > 0.0 { mw_to_dbm(mw) } else { f64::NEG_INFINITY };
        if !on && dbm >= cfg.detector_threshold_dbm {
            on = true;
            edges.push((t, true));
        } else if on && dbm < release {
            on = false;
            edges.push((t, false));
        }
    }
    edges
}

fn classify(e: &TxEvent, trace: &DetectorTrace) -> EventFate {
    let wanted = e.source.relayed_direction();
    let (start, end) = (e.start_us, e.end_us());
    // walk the switch positions across [start, end)
    let mut covered = 0.0;
    let mut leading_only = true;
    let mut cursor = start;
    let mut dir = trace.direction_at(start);
    let mut seen_wanted = dir == wanted;
    for &(t, d) in trace.direction_changes().iter().filter(|(t, _)| *t > start && *t < end) {
        if dir == wanted {
            covered += t - cursor;
        } else if seen_wanted {
            leading_only = false;
        }
        cursor = t;
        dir = d;
        seen_wanted |= dir == wanted;
    }
    if dir == wanted {
        covered += end - cursor;
    } else if seen_wanted {
        leading_only = false;
    }
    let lost = ((e.duration_us - covered) / e.duration_us).clamp(0.0, 1.0);
    let relayed_by_a = wanted == Direction::AtoB;
    if lost <= 1e-12 {
        EventFate::Forwarded
    } else if lost >= 1.0 - 1e-12 {
        if relayed_by_a {
            EventFate::Ignored
        } else {
            EventFate::Lost { lost_fraction: 1.0 }
        }
    } else if relayed_by_a && leading_only {
        EventFate::Clipped { lost_fraction: lost }
    } else {
        EventFate::Lost { lost_fraction: lost }
    }
}

/// Pre-sweep detector signature: pulse durations and the gaps between them.
#[derive(Debug, Clone, PartialEq)]
pub struct StartPattern {
    pub pulses_us: Vec<f64>,
    /// `gaps_us[i]` separates the fall of pulse `i` from the rise of pulse `i + 1`.
    pub gaps_us: Vec<f64>,
    /// Allowed relative deviation of every duration.
    pub tolerance: f64,
}

impl StartPattern {
    pub fn validate(&self) -> Result<(), TddError> {
        if self.pulses_us.is_empty() {
            return Err(TddError::BadPattern("no pulses"));
        }
        if self.gaps_us.len() + 1 != self.pulses_us.len() {
            return Err(TddError::BadPattern("need one gap fewer than pulses"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(TddError::BadPattern("negative tolerance"));
        }
        if self.pulses_us.iter().chain(&self.gaps_us).any(|&x| !(x > 0.0)) {
            return Err(TddError::BadPattern("durations must be positive"));
        }
        Ok(())
    }

    fn matches(&self, expected: f64, observed: f64) -> bool {
        (observed - expected).abs() <= self.tolerance * expected
    }
}

/// Where the start pattern was found.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepLock {
    /// Rise of the first pattern pulse.
    pub start_us: f64,
    /// Fall of the last pattern pulse; tones are counted after it.
    pub end_us: f64,
    /// Index into [`DetectorTrace::pulses`] of the first tone.
    pub first_tone_pulse: usize,
}

/// First occurrence of `pattern` in the detector output.
pub fn detect_sweep_start(trace: &DetectorTrace, pattern: &StartPattern) -> Result<SweepLock, TddError> {
    pattern.validate()?;
    if trace.is_empty() {
        return Err(TddError::EmptyTrace);
    }
    let pulses = trace.pulses();
    let m = pattern.pulses_us.len();
    if pulses.len() < m {
        return Err(TddError::SweepNotDetected);
    }
    (0..=pulses.len() - m)
        .find(|&i| {
            let window = &pulses[i..i + m];
            let durations_ok = window
                .iter()
                .zip(&pattern.pulses_us)
                .all(|(p, &want)| pattern.matches(want, p.duration_us()));
            let gaps_ok = window
                .windows(2)
                .zip(&pattern.gaps_us)
                .all(|(w, &want)| pattern.matches(want, w[1].rise_us - w[0].fall_us));
            durations_ok && gaps_ok
        })
        .map(|i| SweepLock {
            start_us: pulses[i].rise_us,
            end_us: pulses[i + m - 1].fall_us,
            first_tone_pulse: i + m,
        })
        .ok_or(TddError::SweepNotDetected)
}

/// Detector pulses after the start pattern.
pub fn count_tones(trace: &DetectorTrace, lock: &SweepLock) -> usize {
    trace.pulses().len().saturating_sub(lock.first_tone_pulse)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(source: Source, start_us: f64, duration_us: f64, power_dbm: f64) -> TxEvent {
        TxEvent {
            source,
            start_us,
            duration_us,
            freq_hz: 2.44e9,
            power_dbm,
        }
    }

    fn cfg() -> RelayConfig {
        RelayConfig::default()
    }

    #[test]
    fn shortest_packet_clip() {
        let tl = simulate_timeline(&[ev(Source::A, 100.0, 44.0, -30.0)], &cfg()).unwrap();
        let EventFate::Clipped { lost_fraction } = tl.fates[0] else {
            panic!("{:?}", tl.fates[0]);
        };
        assert!((lost_fraction * 100.0 - 0.795).abs() < 1e-3);
    }

    #[test]
    fn longest_packet_clip() {
        let tl = simulate_timeline(&[ev(Source::A, 0.0, 2128.0, -30.0)], &cfg()).unwrap();
        assert!((tl.fates[0].lost_fraction() * 100.0 - 0.016).abs() < 1e-3);
    }

    #[test]
    fn weak_interferer_never_triggers() {
        let events = [
            ev(Source::Interferer(0), 0.0, 2000.0, -50.0),
            ev(Source::B, 2500.0, 100.0, -70.0),
        ];
        let tl = simulate_timeline(&events, &cfg()).unwrap();
        assert!(tl.trace.is_empty());
        assert_eq!(tl.fates[0], EventFate::Ignored);
        assert_eq!(tl.fates[1], EventFate::Forwarded);
        assert!(tl.trace.samples.iter().all(|s| s.direction == Direction::BtoA && !s.detector));
    }

    #[test]
    fn overlapping_b_is_lost() {
        let events = [ev(Source::A, 0.0, 100.0, -30.0), ev(Source::B, 10.0, 50.0, -70.0)];
        let tl = simulate_timeline(&events, &cfg()).unwrap();
        assert_eq!(tl.fates[1], EventFate::Lost { lost_fraction: 1.0 });
        assert!(matches!(tl.fates[0], EventFate::Clipped { .. }));

        let straddle = [ev(Source::A, 0.0, 100.0, -30.0), ev(Source::B, 80.0, 40.0, -70.0)];
        let tl = simulate_timeline(&straddle, &cfg()).unwrap();
        let lost = tl.fates[1].lost_fraction();
        assert!(matches!(tl.fates[1], EventFate::Lost { .. }));
        assert!((lost - 20.35 / 40.0).abs() < 1e-9);
    }

    #[test]
    fn switch_lags_detector() {
        let tl = simulate_timeline(&[ev(Source::A, 10.0, 50.0, -30.0)], &cfg()).unwrap();
        let t = &tl.trace;
        assert_eq!(t.detector_edges(), &[(10.0, true), (60.0, false)]);
        let changes = t.direction_changes();
        assert_eq!(changes.len(), 2);
        assert!((changes[0].0 - 10.35).abs() < 1e-12);
        assert_eq!(changes[0].1, Direction::AtoB);
        assert!((changes[1].0 - 60.35).abs() < 1e-12);
        assert_eq!(t.direction_at(10.2), Direction::BtoA);
        assert_eq!(t.direction_at(10.4), Direction::AtoB);
        assert!(t.detector_at(10.2));
        assert_eq!(t.samples.len(), 5);
    }

    #[test]
    fn hysteresis_holds_detector() {
        // second event 2 dB below threshold keeps the detector on, 4 dB releases it
        let held = [ev(Source::A, 0.0, 10.0, -30.0), ev(Source::Interferer(1), 10.0, 10.0, -42.0)];
        let tl = simulate_timeline(&held, &cfg()).unwrap();
        assert_eq!(tl.trace.pulses(), vec![Pulse { rise_us: 0.0, fall_us: 20.0 }]);
        let released = [ev(Source::A, 0.0, 10.0, -30.0), ev(Source::Interferer(1), 10.0, 10.0, -44.0)];
        let tl = simulate_timeline(&released, &cfg()).unwrap();
        assert_eq!(tl.trace.pulses(), vec![Pulse { rise_us: 0.0, fall_us: 10.0 }]);
        // relayed only until the switch catches up with the release
        let EventFate::Lost { lost_fraction } = tl.fates[1] else {
            panic!("{:?}", tl.fates[1]);
        };
        assert!((lost_fraction - 0.965).abs() < 1e-9);
    }

    #[test]
    fn forward_only_is_static() {
        let c = RelayConfig {
            mode: RelayMode::ForwardOnly,
            ..cfg()
        };
        let tl = simulate_timeline(&[ev(Source::A, 0.0, 10.0, -30.0), ev(Source::B, 20.0, 10.0, -70.0)], &c).unwrap();
        assert!(tl.trace.direction_changes().is_empty());
        assert_eq!(tl.fates[0], EventFate::Forwarded);
        assert_eq!(tl.fates[1], EventFate::Lost { lost_fraction: 1.0 });
    }

    #[test]
    fn invalid_event_lists() {
        let c = cfg();
        assert_eq!(
            simulate_timeline(&[ev(Source::A, 5.0, 1.0, 0.0), ev(Source::B, 1.0, 1.0, 0.0)], &c).unwrap_err(),
            TddError::Unsorted(1)
        );
        assert_eq!(
            simulate_timeline(&[ev(Source::A, 0.0, 0.0, 0.0)], &c).unwrap_err(),
            TddError::InvalidDuration(0)
        );
        assert_eq!(
            simulate_timeline(&[ev(Source::A, 0.0, 5.0, 0.0), ev(Source::A, 4.0, 5.0, 0.0)], &c).unwrap_err(),
            TddError::Overlap(0, 1)
        );
    }

    fn pattern() -> StartPattern {
        StartPattern {
            pulses_us: vec![300.0, 300.0, 120.0],
            gaps_us: vec![500.0, 600.0],
            tolerance: 0.1,
        }
    }

    fn pattern_events(start: f64, stretch_second: f64) -> Vec<TxEvent> {
        let p = pattern();
        let mut t = start;
        let mut events = Vec::new();
        for (i, &d) in p.pulses_us.iter().enumerate() {
            let d = if i == 1 { d * stretch_second } else { d };
            events.push(ev(Source::A, t, d, -30.0));
            t += d + p.gaps_us.get(i).copied().unwrap_or(0.0);
        }
        events
    }

    #[test]
    fn finds_pattern_at_12_ms() {
        let mut events = vec![ev(Source::A, 1000.0, 80.0, -30.0), ev(Source::A, 8500.0, 80.0, -30.0)];
        events.extend(pattern_events(12_000.0, 1.0));
        let last = events.last().unwrap().end_us();
        for k in 0..40 {
            events.push(ev(Source::A, last + 400.0 + 800.0 * k as f64, 250.0, -30.0));
        }
        let tl = simulate_timeline(&events, &cfg()).unwrap();
        let lock = detect_sweep_start(&tl.trace, &pattern()).unwrap();
        assert_eq!(lock.start_us, 12_000.0);
        assert_eq!(count_tones(&tl.trace, &lock), 40);
    }

    #[test]
    fn empty_trace_is_an_error() {
        let tl = simulate_timeline(&[], &cfg()).unwrap();
        assert_eq!(detect_sweep_start(&tl.trace, &pattern()).unwrap_err(), TddError::EmptyTrace);
    }

    #[test]
    fn stretched_pulse_does_not_lock() {
        // deviation of 1.2 × tolerance on the second pulse
        let events = pattern_events(12_000.0, 1.0 + 1.2 * pattern().tolerance);
        let tl = simulate_timeline(&events, &cfg()).unwrap();
        assert_eq!(detect_sweep_start(&tl.trace, &pattern()).unwrap_err(), TddError::SweepNotDetected);

        let within = pattern_events(12_000.0, 1.0 + 0.8 * pattern().tolerance);
        let tl = simulate_timeline(&within, &cfg()).unwrap();
        assert!(detect_sweep_start(&tl.trace, &pattern()).is_ok());
    }

    #[test]
    fn trace_csv_format() {
        let tl = simulate_timeline(&[ev(Source::A, 1.0, 2.0, -30.0)], &cfg()).unwrap();
        let mut buf = Vec::new();
        tl.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "time_us,detector,direction");
        assert_eq!(lines[1], "0.000000,0,B->A");
        assert_eq!(lines[2], "1.000000,1,B->A");
        assert_eq!(lines[3], "1.350000,1,A->B");
    }
}
