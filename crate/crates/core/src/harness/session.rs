//! One ranging procedure through the full scene.
//!
//! A [`Bench`] holds what stays fixed for a scenario (frequency grid and the
//! hardware ripple drawn once from the seed). A [`Cell`] is one resolved
//! measurement setup. [`Bench::run`] builds the TDD event list for a
//! repetition, drives the relay through the detector timeline, composes the
//! forward and reverse channels tone by tone and runs the tone exchange.

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use super::config::{PrimaryLink, ScenarioConfig};
use super::HarnessError;
use crate::channel::{
    amplitude_to_db, db_to_amplitude, propagate, Antenna, ChannelResponse, Geometry, Link, SPEED_OF_LIGHT,
};
use crate::mcpr::{estimate_distance, run_sweep, DistanceEstimate, SweepObservation, ToneSweep};
use crate::relay::{
    equalization_profile, relay_path_response, Direction, ManipulationProgram, Relay, RelayConfig, RelayMode,
    ToneContext,
};
use crate::tdd::{detect_sweep_start, simulate_timeline, Source, Timeline, TxEvent};

/// Residual coupling when neither a relayed nor a direct path carries a tone.
const FLOOR_DB: f64 = -150.0;
/// Stream reserved for scenario-wide draws.
const SCENARIO_STREAM: u64 = u64::MAX;
/// Fade applied to a pattern pulse the attacker misses.
const MISSED_FADE_DB: f64 = 40.0;

/// What a transmission in the event list is for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Background,
    Pattern,
    Reply,
    ToneA(usize),
    ToneB(usize),
    Fake,
    Interferer,
}

/// The relayed part of a scene.
#[derive(Debug, Clone)]
pub struct RelayPath {
    pub hardware: RelayConfig,
    pub program: Option<ManipulationProgram>,
    /// `A` to primary antenna (reciprocal).
    pub a_primary: Vec<Complex64>,
    /// Cable between the stations (reciprocal).
    pub backhaul: Vec<Complex64>,
    /// Secondary antenna to `B` (reciprocal).
    pub secondary_b: Vec<Complex64>,
    /// Power of `A` and `B` at the primary antenna.
    pub a_power_dbm: f64,
    pub b_power_dbm: f64,
    /// Physical one-way path length `A → relay → B`, hardware delay excluded.
    pub path_length_m: f64,
}

#[derive(Debug, Clone)]
pub struct Cell {
    pub label: String,
    pub d_true_m: f64,
    pub d_set_m: Option<f64>,
    /// Direct `A`↔`B` channel (reciprocal).
    pub direct: Option<Vec<Complex64>>,
    pub relay: Option<RelayPath>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub rep: usize,
    pub observation: SweepObservation,
    pub estimate: DistanceEstimate,
    /// Whether the relay recognised the start pattern.
    pub locked: bool,
    /// Tones dropped because the switch pointed the other way.
    pub lost_tones: usize,
}

#[derive(Debug, Clone)]
pub struct Bench {
    pub cfg: ScenarioConfig,
    pub freqs: Vec<f64>,
    /// Transmit ripple of node `A` and node `B`, dB per tone.
    pub ripple_a_db: Vec<f64>,
    pub ripple_b_db: Vec<f64>,
    /// Gain tolerance of the relay's forward and reverse paths, dB per tone.
    pub relay_ripple_fwd_db: Vec<f64>,
    pub relay_ripple_rev_db: Vec<f64>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn draw_ripple(rng: &mut ChaCha8Rng, sigma_db: f64, n: usize) -> Vec<f64> {
    if sigma_db == 0.0 {
        return vec![0.0; n];
    }
    let normal = Normal::new(0.0, sigma_db).expect("sigma validated");
    (0..n).map(|_| normal.sample(rng)).collect()
}

fn mean_db(gains: &[Complex64]) -> f64 {
    gains.iter().map(|g| amplitude_to_db(g.norm())).sum::<f64>() / gains.len() as f64
}

impl Bench {
    pub fn new(cfg: ScenarioConfig) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let freqs = cfg.sweep.frequencies();
        let n = freqs.len();
        let mut rng = rng_for(cfg.seed, SCENARIO_STREAM);
        let ripple_a_db = draw_ripple(&mut rng, cfg.noise.device_ripple_db, n);
        let ripple_b_db = draw_ripple(&mut rng, cfg.noise.device_ripple_db, n);
        let relay_ripple_fwd_db = draw_ripple(&mut rng, cfg.relay.path_tolerance_db, n);
        let relay_ripple_rev_db = draw_ripple(&mut rng, cfg.relay.path_tolerance_db, n);
        Ok(Self {
            cfg,
            freqs,
            ripple_a_db,
            ripple_b_db,
            relay_ripple_fwd_db,
            relay_ripple_rev_db,
        })
    }

    pub fn sweep(&self) -> &ToneSweep {
        &self.cfg.sweep
    }

    /// Relay hardware from the scenario, with the drawn path ripple.
    pub fn hardware(&self, mode: RelayMode, equalize: bool) -> RelayConfig {
        let mut hw = self.cfg.relay.hardware();
        hw.mode = mode;
        hw.equalizer_enabled = equalize;
        hw.forward_ripple_db = self.relay_ripple_fwd_db.clone();
        hw.reverse_ripple_db = self.relay_ripple_rev_db.clone();
        hw
    }

    /// Direct `A`↔`B` channel including obstruction loss.
    pub fn direct_path(&self, geom: &Geometry) -> Result<Vec<Complex64>, HarnessError> {
        let spec = self.cfg.channel.spec();
        let extra = db_to_amplitude(-self.cfg.channel.direct_extra_loss_db);
        Ok(propagate(geom, &spec, Antenna::A, Antenna::B, &self.freqs)?
            .gains()
            .into_iter()
            .map(|g| g * extra)
            .collect())
    }

    /// Strongest direct-path power at `B` over the sweep.
    pub fn direct_power_dbm(&self, geom: &Geometry) -> Result<f64, HarnessError> {
        let direct = self.direct_path(geom)?;
        Ok(self.cfg.radio.tx_power_dbm
            + direct
                .iter()
                .map(|g| amplitude_to_db(g.norm()))
                .fold(f64::NEG_INFINITY, f64::max))
    }

    /// The relayed scene for `geom`. `d_set_m = None` leaves the shifter idle.
    pub fn relay_path(
        &self,
        geom: &Geometry,
        mode: RelayMode,
        equalize: bool,
        d_set_m: Option<f64>,
    ) -> Result<RelayPath, HarnessError> {
        let spec = self.cfg.channel.spec();
        let r = &self.cfg.relay;
        let tx = self.cfg.radio.tx_power_dbm;
        let hardware = self.hardware(mode, equalize);

        let (a_primary, a_len) = match r.primary_link {
            PrimaryLink::Air => (
                propagate(geom, &spec, Antenna::A, Antenna::Primary, &self.freqs)?.gains(),
                geom.distance(Antenna::A, Antenna::Primary),
            ),
            PrimaryLink::Cable => (
                ChannelResponse::cable(
                    Link::new(Antenna::A, Antenna::Primary),
                    &self.freqs,
                    r.primary_cable_loss_db,
                    0.0,
                )
                .gains(),
                0.0,
            ),
        };
        let backhaul_m = r.backhaul_electrical_m();
        let backhaul = ChannelResponse::cable(
            Link::new(Antenna::Primary, Antenna::Secondary),
            &self.freqs,
            r.backhaul_loss_db(),
            backhaul_m / SPEED_OF_LIGHT * 1e9,
        )
        .gains();
        let secondary_b = propagate(geom, &spec, Antenna::Secondary, Antenna::B, &self.freqs)?.gains();
        let b_primary = propagate(geom, &spec, Antenna::B, Antenna::Primary, &self.freqs)?.gains();
        let path_length_m = a_len + backhaul_m + geom.distance(Antenna::Secondary, Antenna::B);

        let program = match d_set_m.filter(|_| self.cfg.program.enabled) {
            None => None,
            Some(d_set) => {
                let believed = match self.cfg.program.believed_distance_m {
                    Some(b) => b,
                    None => self.auto_belief(geom, mode, path_length_m, &hardware),
                };
                let sweep = self.sweep();
                let mut p = ManipulationProgram::new(
                    d_set,
                    believed,
                    sweep.f_start_hz,
                    sweep.f_step_hz,
                    sweep.tones,
                    self.cfg.program.inference,
                )?;
                if equalize {
                    let fwd = relay_path_response(&hardware, Direction::AtoB, &self.freqs);
                    let rev = relay_path_response(&hardware, Direction::BtoA, &self.freqs);
                    p = p.with_equalization(equalization_profile(&fwd, &rev, &hardware.attenuator)?);
                }
                Some(p)
            }
        };

        Ok(RelayPath {
            hardware,
            program,
            a_power_dbm: tx + mean_db(&a_primary),
            b_power_dbm: tx + mean_db(&b_primary),
            a_primary,
            backhaul,
            secondary_b,
            path_length_m,
        })
    }

    /// Unmanipulated distance the attacker expects to be measured.
    fn auto_belief(&self, geom: &Geometry, mode: RelayMode, path_length_m: f64, hw: &RelayConfig) -> f64 {
        let bias = if self.cfg.program.self_compensate {
            hw.delay_bias_m()
        } else {
            0.0
        };
        let relayed = path_length_m + bias;
        match mode {
            RelayMode::Bidirectional => relayed,
            // only the forward leg is relayed; the reply travels directly
            RelayMode::ForwardOnly => 0.5 * (relayed + geom.distance(Antenna::A, Antenna::B)),
        }
    }

    /// Transmissions of one repetition, sorted by start time.
    pub fn build_events(&self, relay: &RelayPath, order: &[usize], missed_pattern: bool) -> (Vec<TxEvent>, Vec<Role>) {
        let t = &self.cfg.tdd;
        let sweep = self.sweep();
        let f_mid = self.freqs[self.freqs.len() / 2];
        let mut list: Vec<(TxEvent, Role)> = Vec::new();
        let mut push = |source, start_us, duration_us, freq_hz, power_dbm, role| {
            list.push((
                TxEvent {
                    source,
                    start_us,
                    duration_us,
                    freq_hz,
                    power_dbm,
                },
                role,
            ))
        };
        let pkt = t.background_packet_us;
        let exchange_tail = pkt + 2.0 * t.reply_delay_us + pkt;

        if t.background_interval_us > 0.0 {
            let mut start = 0.0;
            while start + exchange_tail < t.pattern_start_us {
                push(Source::A, start, pkt, f_mid, relay.a_power_dbm, Role::Background);
                push(Source::B, start + pkt + t.reply_delay_us, pkt, f_mid, relay.b_power_dbm, Role::Reply);
                start += t.background_interval_us;
            }
        }

        let mut start = t.pattern_start_us;
        let n_pattern = t.pattern_pulses_us.len();
        for (i, &len) in t.pattern_pulses_us.iter().enumerate() {
            let power = if missed_pattern && i == 0 {
                relay.a_power_dbm - MISSED_FADE_DB
            } else {
                relay.a_power_dbm
            };
            push(Source::A, start, len, f_mid, power, Role::Pattern);
            let gap = if i + 1 < n_pattern {
                t.pattern_gaps_us[i]
            } else {
                t.sweep_lead_us
            };
            if 2.0 * t.reply_delay_us + pkt <= gap {
                push(Source::B, start + len + t.reply_delay_us, pkt, f_mid, relay.b_power_dbm, Role::Reply);
            }
            start += len + gap;
        }

        let slot = sweep.exchange_us();
        for (k, &idx) in order.iter().enumerate() {
            if k == t.fake_after_tone {
                for _ in 0..t.fake_pulses {
                    push(Source::A, start, sweep.tone_us, self.freqs[idx], relay.a_power_dbm, Role::Fake);
                    start += slot;
                }
            }
            let f = self.freqs[idx];
            push(Source::A, start, sweep.tone_us, f, relay.a_power_dbm, Role::ToneA(idx));
            let b_start = start + sweep.tone_us + sweep.gap_us;
            push(Source::B, b_start, sweep.tone_us, f, relay.b_power_dbm, Role::ToneB(idx));
            start += slot;
        }

        for (i, it) in t.interferers.iter().enumerate() {
            push(
                Source::Interferer(i as u16),
                it.start_us,
                it.duration_us,
                f_mid,
                it.power_dbm,
                Role::Interferer,
            );
        }

        list.sort_by(|a, b| a.0.start_us.total_cmp(&b.0.start_us));
        list.into_iter().unzip()
    }

    /// Carrier visiting order for one repetition.
    fn tone_order(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.freqs.len()).collect();
        if self.cfg.tdd.randomized_hopping {
            order.shuffle(rng);
        }
        order
    }

    /// Detector timeline of one repetition (for trace output).
    pub fn timeline(&self, relay: &RelayPath, rep: usize) -> Result<(Timeline, Vec<TxEvent>, Vec<Role>), HarnessError> {
        let mut rng = rng_for(self.cfg.seed, rep as u64);
        let order = self.tone_order(&mut rng);
        let missed = self.cfg.tdd.missed_pattern_reps.contains(&rep);
        let (events, roles) = self.build_events(relay, &order, missed);
        let timeline = simulate_timeline(&events, &relay.hardware)?;
        Ok((timeline, events, roles))
    }

    /// One ranging procedure.
    pub fn run(&self, cell: &Cell, cell_index: usize, rep: usize) -> Result<Outcome, HarnessError> {
        let mut rng = rng_for(self.cfg.seed, ((cell_index as u64) << 32) | rep as u64);
        let order = self.tone_order(&mut rng);
        let n = self.freqs.len();

        let mut relayed_fwd: Vec<Option<Complex64>> = vec![None; n];
        let mut relayed_rev: Vec<Option<Complex64>> = vec![None; n];
        let mut locked = false;
        let mut lost_tones = 0;

        if let Some(path) = &cell.relay {
            let missed = self.cfg.tdd.missed_pattern_reps.contains(&rep);
            let (events, roles) = self.build_events(path, &order, missed);
            let timeline = simulate_timeline(&events, &path.hardware)?;
            let trace = &timeline.trace;
            let lock = detect_sweep_start(trace, &self.cfg.tdd.pattern()).ok();
            locked = lock.is_some();
            let rises: Vec<f64> = match &lock {
                Some(l) => trace.rising_edges().into_iter().filter(|&r| r > l.end_us).collect(),
                None => Vec::new(),
            };
            let mut relay = Relay::new(path.hardware.clone(), path.program.clone())?;
            let mut lock_pending = lock;
            let mut next_rise = 0;

            for (ev, role) in events.iter().zip(&roles) {
                let (idx, dir) = match *role {
                    Role::ToneA(i) => (i, Direction::AtoB),
                    Role::ToneB(i) => (i, Direction::BtoA),
                    _ => continue,
                };
                let mid = ev.start_us + 0.5 * ev.duration_us;
                if lock_pending.is_some_and(|l| l.end_us <= mid) {
                    relay.on_sweep_start();
                    lock_pending = None;
                }
                while next_rise < rises.len() && rises[next_rise] <= mid {
                    relay.on_transmission_start();
                    next_rise += 1;
                }
                relay.set_direction(trace.direction_at(mid), mid);
                let tone = ToneContext {
                    freq_hz: self.freqs[idx],
                    index: idx,
                };
                match dir {
                    Direction::AtoB => {
                        if let Ok(g) = relay.forward_tone(dir, path.a_primary[idx], tone) {
                            relayed_fwd[idx] = Some(g * path.backhaul[idx] * path.secondary_b[idx]);
                        }
                    }
                    Direction::BtoA => {
                        if path.hardware.mode == RelayMode::ForwardOnly {
                            continue;
                        }
                        let input = path.secondary_b[idx] * path.backhaul[idx];
                        if let Ok(g) = relay.forward_tone(dir, input, tone) {
                            relayed_rev[idx] = Some(g * path.a_primary[idx]);
                        }
                    }
                }
            }
            lost_tones = relay.lost_tones();
        }

        let floor = db_to_amplitude(FLOOR_DB);
        let mut compose = |relayed: &[Option<Complex64>], ripple_db: &[f64]| -> Vec<Complex64> {
            (0..n)
                .map(|i| {
                    let direct = cell.direct.as_ref().map(|d| d[i]);
                    let g = match (relayed[i], direct) {
                        (Some(r), Some(d)) => r + d,
                        (Some(r), None) => r,
                        (None, Some(d)) => d,
                        (None, None) => Complex64::from_polar(floor, rng.random_range(0.0..std::f64::consts::TAU)),
                    };
                    g * db_to_amplitude(ripple_db[i])
                })
                .collect()
        };
        let fwd = compose(&relayed_fwd, &self.ripple_a_db);
        let rev = compose(&relayed_rev, &self.ripple_b_db);
        let forward = ChannelResponse::from_gains(Link::A_TO_B, self.freqs.clone(), &fwd);
        let reverse = ChannelResponse::from_gains(Link::B_TO_A, self.freqs.clone(), &rev);

        let mut observation = run_sweep(self.sweep(), &forward, &reverse, &self.cfg.noise.measurement(), &mut rng)?;
        observation.sweep_id = rep as u64;
        let estimate = estimate_distance(&observation, self.sweep());
        Ok(Outcome {
            rep,
            observation,
            estimate,
            locked,
            lost_tones,
        })
    }

    /// All repetitions of every cell, in (cell, rep) order.
    pub fn run_cells(&self, cells: &[Cell]) -> Result<Vec<Vec<Outcome>>, HarnessError> {
        let reps = self.cfg.repetitions;
        let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..reps).map(move |r| (c, r))).collect();
        let flat: Vec<Outcome> = jobs
            .par_iter()
            .map(|&(c, r)| self.run(&cells[c], c, r))
            .collect::<Result<_, _>>()?;
        let mut it = flat.into_iter();
        Ok(cells.iter().map(|_| it.by_ref().take(reps).collect()).collect())
    }
}
