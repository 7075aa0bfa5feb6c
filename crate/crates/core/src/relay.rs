//! The attacker: a bidirectional amplify-and-forward relay.
//!
//! A power detector at the primary station selects the active direction:
//! `A→B` while `A` transmits, `B→A` otherwise. For distance manipulation a
//! digital phase shifter sits in the `B→A` path and steps by a constant
//! phase slope on every detected transmission of `A`; a step attenuator in
//! the `A→B` path applies a per-tone profile `β(f)` that equalizes the
//! relay's forward and reverse hardware.
//!
//! In [`RelayMode::ForwardOnly`] the relay carries `A→B` only and both
//! manipulation elements act on that path.

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{db_to_amplitude, delay_phase, wrap_phase, Antenna, ChannelResponse, Link, SPEED_OF_LIGHT};

pub const MAX_GAIN_DB: f64 = 90.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RelayError {
    #[error("gain {0} dB exceeds {MAX_GAIN_DB} dB")]
    GainTooHigh(f64),
    #[error("phase shifter resolution {0} bits outside [1, 12]")]
    PhaseBits(u8),
    #[error("reaction delay must be non-negative (got {0} us)")]
    NegativeReaction(f64),
    #[error("hardware delay must be non-negative (got {0} ns)")]
    NegativeDelay(f64),
    #[error("attenuator step must be positive and range non-negative")]
    Attenuator,
    #[error("detector hysteresis must be non-negative (got {0} dB)")]
    Hysteresis(f64),
    #[error("frequency step must be positive (got {0} Hz)")]
    InvalidStep(f64),
    #[error("sweep overrun: transmission counter {counter} with {tones} tones")]
    SweepOverrun { counter: usize, tones: usize },
    #[error("tone dropped: switch is set to {active}, tone travels {requested}")]
    ToneLost { active: Direction, requested: Direction },
    #[error("relay path responses are sampled on different grids")]
    GridMismatch,
}

/// Signal direction through the relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    /// Primary to secondary, carrying `A`'s transmissions.
    AtoB,
    /// Secondary to primary, carrying `B`'s transmissions.
    BtoA,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::AtoB => "A->B",
            Direction::BtoA => "B->A",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelayMode {
    /// Power-detector switched, both directions relayed.
    #[default]
    Bidirectional,
    /// Only `A→B` is relayed; `B→A` travels the direct channel.
    ForwardOnly,
}

impl RelayMode {
    /// Path carrying the phase shifter.
    pub fn phase_path(self) -> Direction {
        match self {
            RelayMode::Bidirectional => Direction::BtoA,
            RelayMode::ForwardOnly => Direction::AtoB,
        }
    }

    /// Path carrying the step attenuator.
    pub fn attenuator_path(self) -> Direction {
        Direction::AtoB
    }
}

/// Digital step attenuator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Attenuator {
    pub step_db: f64,
    pub range_db: f64,
}

impl Default for Attenuator {
    fn default() -> Self {
        Self {
            step_db: 0.5,
            range_db: 31.5,
        }
    }
}

impl Attenuator {
    /// Nearest reachable setting and whether `db` had to be clamped.
    pub fn quantize(&self, db: f64) -> (f64, bool) {
        let clamped = db.clamp(0.0, self.range_db);
        let out_of_range = (db - clamped).abs() > 1e-9;
        let steps = (clamped / self.step_db).round();
        let max_steps = (self.range_db / self.step_db + 1e-9).floor();
        (steps.min(max_steps) * self.step_db, out_of_range)
    }
}

/// Hardware model of the relay.
#[derive(Debug, Clone, PartialEq)]
pub struct RelayConfig {
    pub mode: RelayMode,
    pub gain_forward_db: f64,
    pub gain_reverse_db: f64,
    /// Per-pass hardware delay including feed cables.
    pub delay_ns: f64,
    pub detector_threshold_dbm: f64,
    /// Release threshold sits this far below the assert threshold.
    pub detector_hysteresis_db: f64,
    pub reaction_delay_us: f64,
    /// `None` models an ideal shifter with continuous phase.
    pub phase_bits: Option<u8>,
    pub attenuator: Attenuator,
    pub phase_shifter_enabled: bool,
    pub equalizer_enabled: bool,
    /// Per-tone deviation of each path's gain from nominal, dB. Empty means flat.
    pub forward_ripple_db: Vec<f64>,
    pub reverse_ripple_db: Vec<f64>,
}

impl Default for RelayConfig {
    fn default() -> Self {
        Self {
            mode: RelayMode::Bidirectional,
            gain_forward_db: 75.0,
            gain_reverse_db: 75.0,
            delay_ns: 30.0,
            detector_threshold_dbm: -40.0,
            detector_hysteresis_db: 3.0,
            reaction_delay_us: 0.35,
            phase_bits: Some(6),
            attenuator: Attenuator::default(),
            phase_shifter_enabled: true,
            equalizer_enabled: false,
            forward_ripple_db: Vec::new(),
            reverse_ripple_db: Vec::new(),
        }
    }
}

impl RelayConfig {
    pub fn validate(&self) -> Result<(), RelayError> {
        for g in [self.gain_forward_db, self.gain_reverse_db] {
            if g > MAX_GAIN_DB {
                return Err(RelayError::GainTooHigh(g));
            }
        }
        if let Some(bits) = self.phase_bits {
            if !(1..=12).contains(&bits) {
                return Err(RelayError::PhaseBits(bits));
            }
        }
        if !(self.reaction_delay_us >= 0.0) {
            return Err(RelayError::NegativeReaction(self.reaction_delay_us));
        }
        if !(self.delay_ns >= 0.0) {
            return Err(RelayError::NegativeDelay(self.delay_ns));
        }
        if !(self.attenuator.step_db > 0.0) || !(self.attenuator.range_db >= 0.0) {
            return Err(RelayError::Attenuator);
        }
        if !(self.detector_hysteresis_db >= 0.0) {
            return Err(RelayError::Hysteresis(self.detector_hysteresis_db));
        }
        Ok(())
    }

    /// Detector release level.
    pub fn release_threshold_dbm(&self) -> f64 {
        self.detector_threshold_dbm - self.detector_hysteresis_db
    }

    /// Range offset caused by the hardware delay, `c0 · T_relay`.
    pub fn delay_bias_m(&self) -> f64 {
        SPEED_OF_LIGHT * self.delay_ns * 1e-9
    }

    fn path_gain_db(&self, direction: Direction, tone_index: usize) -> f64 {
        let (nominal, ripple) = match direction {
            Direction::AtoB => (self.gain_forward_db, &self.forward_ripple_db),
            Direction::BtoA => (self.gain_reverse_db, &self.reverse_ripple_db),
        };
        nominal + ripple.get(tone_index).copied().unwrap_or(0.0)
    }
}

/// How the attacker learns the frequency of the current tone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FrequencyInference {
    /// Counts detected transmissions since the sweep start and assumes a
    /// linear sweep.
    #[default]
    Count,
    /// Knows the true frequency (spectrum-sensing attacker).
    Oracle,
}

/// Per-tone attenuation that makes the relay's forward path match its reverse path.
#[derive(Debug, Clone, PartialEq)]
pub struct EqualizationProfile {
    pub freqs: Vec<f64>,
    pub beta_db: Vec<f64>,
    /// Tones whose required attenuation fell outside the attenuator range.
    pub clamped: Vec<bool>,
}

impl EqualizationProfile {
    pub fn beta_at(&self, f: f64) -> f64 {
        self.freqs
            .iter()
            .position(|&x| (x - f).abs() <= 1e-9 * f.abs().max(1.0))
            .map_or(0.0, |i| self.beta_db[i])
    }
}

/// The attacker's manipulation state for one ranging sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct ManipulationProgram {
    pub d_set_m: f64,
    /// What the attacker believes the unmanipulated distance to be,
    /// including any relay delay it wants to compensate.
    pub believed_distance_m: f64,
    pub f_start_hz: f64,
    pub f_step_hz: f64,
    pub tones: usize,
    pub inference: FrequencyInference,
    pub equalization: Option<EqualizationProfile>,
    phase_state: f64,
}

impl ManipulationProgram {
    pub fn new(
        d_set_m: f64,
        believed_distance_m: f64,
        f_start_hz: f64,
        f_step_hz: f64,
        tones: usize,
        inference: FrequencyInference,
    ) -> Result<Self, RelayError> {
        if !(f_step_hz > 0.0) {
            return Err(RelayError::InvalidStep(f_step_hz));
        }
        Ok(Self {
            d_set_m,
            believed_distance_m,
            f_start_hz,
            f_step_hz,
            tones,
            inference,
            equalization: None,
            phase_state: 0.0,
        })
    }

    pub fn with_equalization(mut self, profile: EqualizationProfile) -> Self {
        self.equalization = Some(profile);
        self
    }

    pub fn phase_slope(&self) -> f64 {
        required_phase_slope(self.d_set_m, self.believed_distance_m, self.f_step_hz)
    }

    /// Current (unquantized) shifter command, in [0, 2π).
    pub fn phase_state(&self) -> f64 {
        self.phase_state
    }

    pub fn reset_phase(&mut self) {
        self.phase_state = 0.0;
    }

    /// `φ_t = φ_{t−1} + Δφ_A mod 2π`. Returns the new state.
    pub fn advance_phase(&mut self) -> f64 {
        self.phase_state = wrap_phase(self.phase_state + self.phase_slope());
        self.phase_state
    }

    /// Phase a frequency-aware attacker applies to the tone at `index`; equals
    /// the counted state after `index + 1` advances.
    pub fn phase_for_index(&self, index: usize) -> f64 {
        wrap_phase((index as f64 + 1.0) * self.phase_slope())
    }

    /// Frequency of the tone following `counter` detected transmissions.
    pub fn infer_tone_frequency(&self, counter: usize, true_freq_hz: f64) -> Result<f64, RelayError> {
        match self.inference {
            FrequencyInference::Oracle => Ok(true_freq_hz),
            FrequencyInference::Count => {
                if counter >= self.tones {
                    return Err(RelayError::SweepOverrun {
                        counter,
                        tones: self.tones,
                    });
                }
                Ok(self.f_start_hz + counter as f64 * self.f_step_hz)
            }
        }
    }
}

/// `Δφ_A = 4π f_step (d_set − d) / c0`, wrapped to [0, 2π).
pub fn required_phase_slope(d_set_m: f64, believed_distance_m: f64, f_step_hz: f64) -> f64 {
    wrap_phase(4.0 * std::f64::consts::PI * f_step_hz * (d_set_m - believed_distance_m) / SPEED_OF_LIGHT)
}

/// Nearest code of a `bits`-bit shifter spanning 360°.
pub fn quantize_phase(phase: f64, bits: u8) -> f64 {
    let step = TAU / f64::from(1u32 << bits);
    wrap_phase((phase / step).round() * step)
}

/// Attenuation profile `β(f) = quantize(20 log10(|fwd| / |rev|))`.
pub fn equalization_profile(
    forward: &ChannelResponse,
    reverse: &ChannelResponse,
    attenuator: &Attenuator,
) -> Result<EqualizationProfile, RelayError> {
    if !forward.same_grid(reverse.freqs()) {
        return Err(RelayError::GridMismatch);
    }
    let (beta_db, clamped) = forward
        .magnitudes()
        .iter()
        .zip(reverse.magnitudes())
        .map(|(f, r)| attenuator.quantize(20.0 * (f / r).log10()))
        .unzip();
    Ok(EqualizationProfile {
        freqs: forward.freqs().to_vec(),
        beta_db,
        clamped,
    })
}

/// What a network analyzer sees across one relay path: gain, hardware ripple
/// and delay, with the manipulation elements at their zero setting.
pub fn relay_path_response(cfg: &RelayConfig, direction: Direction, freqs: &[f64]) -> ChannelResponse {
    let link = match direction {
        Direction::AtoB => Link::new(Antenna::Primary, Antenna::Secondary),
        Direction::BtoA => Link::new(Antenna::Secondary, Antenna::Primary),
    };
    let gains: Vec<Complex64> = freqs
        .iter()
        .enumerate()
        .map(|(i, &f)| {
            Complex64::from_polar(
                db_to_amplitude(cfg.path_gain_db(direction, i)),
                delay_phase(f, cfg.delay_ns * 1e-9),
            )
        })
        .collect();
    ChannelResponse::from_gains(link, freqs.to_vec(), &gains)
}

/// Physical identity of a tone passing the relay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToneContext {
    pub freq_hz: f64,
    /// Carrier index within the sweep; selects hardware ripple.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelayState {
    pub direction: Direction,
    pub last_change_us: f64,
    /// Transmissions of `A` detected since the sweep start.
    pub tone_counter: usize,
    pub sweep_locked: bool,
}

impl Default for RelayState {
    fn default() -> Self {
        Self {
            direction: Direction::BtoA,
            last_change_us: 0.0,
            tone_counter: 0,
            sweep_locked: false,
        }
    }
}

/// A relay instance driven by the TDD event loop.
#[derive(Debug, Clone)]
pub struct Relay {
    cfg: RelayConfig,
    program: Option<ManipulationProgram>,
    state: RelayState,
    lost_tones: usize,
}

impl Relay {
    pub fn new(cfg: RelayConfig, program: Option<ManipulationProgram>) -> Result<Self, RelayError> {
        cfg.validate()?;
        let mut state = RelayState::default();
        if cfg.mode == RelayMode::ForwardOnly {
            state.direction = Direction::AtoB;
        }
        Ok(Self {
            cfg,
            program,
            state,
            lost_tones: 0,
        })
    }

    pub fn config(&self) -> &RelayConfig {
        &self.cfg
    }

    pub fn program(&self) -> Option<&ManipulationProgram> {
        self.program.as_ref()
    }

    pub fn state(&self) -> &RelayState {
        &self.state
    }

    pub fn lost_tones(&self) -> usize {
        self.lost_tones
    }

    pub fn set_direction(&mut self, direction: Direction, t_us: f64) {
        if self.cfg.mode == RelayMode::ForwardOnly {
            return;
        }
        if direction != self.state.direction {
            self.state.direction = direction;
            self.state.last_change_us = t_us;
        }
    }

    /// The start pattern of a sweep was recognised: reset counter and phase.
    pub fn on_sweep_start(&mut self) {
        self.state.sweep_locked = true;
        self.state.tone_counter = 0;
        if let Some(p) = self.program.as_mut() {
            p.reset_phase();
        }
    }

    /// Rising detector edge. Advances the counting attacker by one tone.
    pub fn on_transmission_start(&mut self) {
        if !self.state.sweep_locked {
            return;
        }
        self.state.tone_counter += 1;
        if let Some(p) = self.program.as_mut() {
            if p.inference == FrequencyInference::Count {
                p.advance_phase();
            }
        }
    }

    /// Phase the shifter applies to `tone`, after quantization.
    pub fn applied_phase(&self, tone: ToneContext) -> f64 {
        let Some(p) = self.program.as_ref().filter(|_| self.cfg.phase_shifter_enabled) else {
            return 0.0;
        };
        let commanded = match p.inference {
            FrequencyInference::Count => p.phase_state(),
            FrequencyInference::Oracle => p.phase_for_index(tone.index),
        };
        match self.cfg.phase_bits {
            Some(bits) => quantize_phase(commanded, bits),
            None => commanded,
        }
    }

    /// Attenuation the step attenuator applies to `tone`, dB.
    pub fn applied_attenuation_db(&self, tone: ToneContext) -> f64 {
        let Some(p) = self.program.as_ref().filter(|_| self.cfg.equalizer_enabled) else {
            return 0.0;
        };
        let Some(profile) = p.equalization.as_ref() else {
            return 0.0;
        };
        let inferred = match p.inference {
            FrequencyInference::Oracle => Ok(tone.freq_hz),
            FrequencyInference::Count if !self.state.sweep_locked || self.state.tone_counter == 0 => {
                return 0.0
            }
            FrequencyInference::Count => p.infer_tone_frequency(self.state.tone_counter - 1, tone.freq_hz),
        };
        // an overrun counter no longer maps to a tone; the attenuator idles
        inferred.map_or(0.0, |f| profile.beta_at(f))
    }

    /// Passes one tone through the active path.
    ///
    /// `output = input · G(f) · e^{jφ} · β(f) · e^{j2πf·T_relay}` with the
    /// shifter and attenuator only on their respective paths.
    pub fn forward_tone(
        &mut self,
        direction: Direction,
        input: Complex64,
        tone: ToneContext,
    ) -> Result<Complex64, RelayError> {
        if direction != self.state.direction {
            self.lost_tones += 1;
            return Err(RelayError::ToneLost {
                active: self.state.direction,
                requested: direction,
            });
        }
        let mut gain_db = self.cfg.path_gain_db(direction, tone.index);
        if direction == self.cfg.mode.attenuator_path() {
            gain_db -= self.applied_attenuation_db(tone);
        }
        let mut phase = delay_phase(tone.freq_hz, self.cfg.delay_ns * 1e-9);
        if direction == self.cfg.mode.phase_path() {
            phase += self.applied_phase(tone);
        }
        Ok(input * Complex64::from_polar(db_to_amplitude(gain_db), phase))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::wrap_signed;
    use std::f64::consts::PI;

    fn tone(index: usize) -> ToneContext {
        ToneContext {
            freq_hz: 2.402e9 + index as f64 * 1e6,
            index,
        }
    }

    #[test]
    fn slope_examples() {
        assert_eq!(required_phase_slope(7.0, 7.0, 1e6), 0.0);
        let raw = 4.0 * PI * 1e6 * (2.0 - 88.0) / SPEED_OF_LIGHT;
        assert!((raw + 3.6048).abs() < 1e-4);
        assert!((required_phase_slope(2.0, 88.0, 1e6) - 2.6784).abs() < 1e-4);
        assert!((required_phase_slope(50.0, 5.0, 1e6) - 1.8863).abs() < 1e-4);
    }

    #[test]
    fn advance_wraps() {
        // d_set − d chosen so the slope is exactly π/2
        let quarter = SPEED_OF_LIGHT / (8.0 * 1e6);
        let mut p = ManipulationProgram::new(quarter, 0.0, 2.402e9, 1e6, 40, FrequencyInference::Count).unwrap();
        assert!((p.phase_slope() - PI / 2.0).abs() < 1e-12);
        let states: Vec<f64> = (0..4).map(|_| p.advance_phase()).collect();
        let expected = [PI / 2.0, PI, 1.5 * PI, 0.0];
        for (s, e) in states.iter().zip(expected) {
            assert!(wrap_signed(s - e).abs() < 1e-12);
        }
        assert!((0.0..TAU).contains(&p.phase_state()));

        let mut still = ManipulationProgram::new(3.0, 3.0, 2.402e9, 1e6, 40, FrequencyInference::Count).unwrap();
        for _ in 0..5 {
            assert_eq!(still.advance_phase(), 0.0);
        }
    }

    #[test]
    fn six_bit_quantization() {
        let q = quantize_phase(0.1, 6);
        assert!((q - TAU / 64.0).abs() < 1e-15);
        assert!((q - 0.0982).abs() < 1e-4);
        assert_eq!(quantize_phase(TAU - 0.01, 6), 0.0);
    }

    #[test]
    fn identity_relay() {
        let cfg = RelayConfig {
            gain_forward_db: 0.0,
            gain_reverse_db: 0.0,
            delay_ns: 0.0,
            ..Default::default()
        };
        let mut relay = Relay::new(cfg, None).unwrap();
        let x = Complex64::new(0.3, -0.7);
        let y = relay.forward_tone(Direction::BtoA, x, tone(3)).unwrap();
        assert!((y - x).norm() < 1e-15);
    }

    #[test]
    fn gain_75_db() {
        let mut relay = Relay::new(RelayConfig::default(), None).unwrap();
        let y = relay.forward_tone(Direction::BtoA, Complex64::new(1.0, 0.0), tone(0)).unwrap();
        assert!((y.norm() - 10f64.powf(3.75)).abs() < 1e-9);
    }

    #[test]
    fn delay_bias_is_nine_meters() {
        let cfg = RelayConfig::default();
        assert!((cfg.delay_bias_m() - 8.994).abs() < 1e-3);
        // two passes of 30 ns add the two-way phase of c0·30 ns of range
        let f = 2.44e9;
        let mut relay = Relay::new(cfg.clone(), None).unwrap();
        let t = ToneContext { freq_hz: f, index: 0 };
        relay.set_direction(Direction::AtoB, 0.0);
        let fwd = relay.forward_tone(Direction::AtoB, Complex64::new(1.0, 0.0), t).unwrap();
        relay.set_direction(Direction::BtoA, 1.0);
        let rev = relay.forward_tone(Direction::BtoA, Complex64::new(1.0, 0.0), t).unwrap();
        let two_way = wrap_phase(fwd.arg() + rev.arg());
        let expected = wrap_phase(4.0 * PI * f * cfg.delay_bias_m() / SPEED_OF_LIGHT);
        assert!(wrap_signed(two_way - expected).abs() < 1e-9);
    }

    #[test]
    fn direction_mismatch_drops_tone() {
        let mut relay = Relay::new(RelayConfig::default(), None).unwrap();
        let err = relay.forward_tone(Direction::AtoB, Complex64::new(1.0, 0.0), tone(0)).unwrap_err();
        assert_eq!(
            err,
            RelayError::ToneLost {
                active: Direction::BtoA,
                requested: Direction::AtoB
            }
        );
        assert_eq!(relay.lost_tones(), 1);
    }

    #[test]
    fn forward_only_never_switches() {
        let cfg = RelayConfig {
            mode: RelayMode::ForwardOnly,
            ..Default::default()
        };
        let mut relay = Relay::new(cfg, None).unwrap();
        relay.set_direction(Direction::BtoA, 5.0);
        assert_eq!(relay.state().direction, Direction::AtoB);
    }

    #[test]
    fn infer_frequency() {
        let p = ManipulationProgram::new(1.0, 2.0, 2.402e9, 1e6, 40, FrequencyInference::Count).unwrap();
        assert_eq!(p.infer_tone_frequency(0, 9.9e9).unwrap(), 2.402e9);
        assert_eq!(p.infer_tone_frequency(39, 9.9e9).unwrap(), 2.441e9);
        assert_eq!(
            p.infer_tone_frequency(40, 9.9e9).unwrap_err(),
            RelayError::SweepOverrun { counter: 40, tones: 40 }
        );
        let o = ManipulationProgram {
            inference: FrequencyInference::Oracle,
            ..p
        };
        assert_eq!(o.infer_tone_frequency(7, 2.43e9).unwrap(), 2.43e9);
    }

    #[test]
    fn equalization_examples() {
        let freqs = [2.402e9, 2.403e9, 2.404e9];
        let flat = |db: f64| ChannelResponse::cable(Link::A_TO_B, &freqs, -db, 0.0);
        let att = Attenuator::default();

        let same = equalization_profile(&flat(75.0), &flat(75.0), &att).unwrap();
        assert!(same.beta_db.iter().all(|&b| b == 0.0));

        let hot = equalization_profile(&flat(77.0), &flat(75.0), &att).unwrap();
        assert!(hot.beta_db.iter().all(|&b| (b - 2.0).abs() < 1e-9));

        let small = equalization_profile(&flat(75.3), &flat(75.0), &att).unwrap();
        assert!(small.beta_db.iter().all(|&b| (b - 0.5).abs() < 1e-9));
        let residual = 0.3 - small.beta_db[0];
        assert!((residual + 0.2).abs() < 1e-9);
        assert!(small.clamped.iter().all(|c| !c));

        let cold = equalization_profile(&flat(73.0), &flat(75.0), &att).unwrap();
        assert!(cold.beta_db.iter().all(|&b| b == 0.0));
        assert!(cold.clamped.iter().all(|&c| c));

        let huge = equalization_profile(&flat(80.0), &flat(40.0), &att).unwrap();
        assert!(huge.beta_db.iter().all(|&b| b == 31.5));
        assert!(huge.clamped.iter().all(|&c| c));

        let other = ChannelResponse::cable(Link::A_TO_B, &freqs[..2], 0.0, 0.0);
        assert_eq!(
            equalization_profile(&other, &flat(0.0), &att).unwrap_err(),
            RelayError::GridMismatch
        );
    }

    #[test]
    fn counting_attacker_advances_only_after_lock() {
        let p = ManipulationProgram::new(1.0, 20.0, 2.402e9, 1e6, 40, FrequencyInference::Count).unwrap();
        let slope = p.phase_slope();
        let cfg = RelayConfig {
            phase_bits: None,
            ..Default::default()
        };
        let mut relay = Relay::new(cfg, Some(p)).unwrap();
        relay.on_transmission_start();
        assert_eq!(relay.state().tone_counter, 0);
        assert_eq!(relay.applied_phase(tone(0)), 0.0);
        relay.on_sweep_start();
        relay.on_transmission_start();
        relay.on_transmission_start();
        assert_eq!(relay.state().tone_counter, 2);
        assert!(wrap_signed(relay.applied_phase(tone(1)) - 2.0 * slope).abs() < 1e-12);
    }

    #[test]
    fn attenuator_follows_counted_frequency() {
        let freqs: Vec<f64> = (0..4).map(|i| 2.402e9 + i as f64 * 1e6).collect();
        let profile = EqualizationProfile {
            freqs: freqs.clone(),
            beta_db: vec![0.5, 1.0, 1.5, 2.0],
            clamped: vec![false; 4],
        };
        let p = ManipulationProgram::new(1.0, 1.0, 2.402e9, 1e6, 4, FrequencyInference::Count)
            .unwrap()
            .with_equalization(profile);
        let cfg = RelayConfig {
            equalizer_enabled: true,
            ..Default::default()
        };
        let mut relay = Relay::new(cfg, Some(p)).unwrap();
        relay.on_sweep_start();
        relay.on_transmission_start();
        relay.on_transmission_start();
        // the counter says tone 1 regardless of the real carrier
        assert_eq!(relay.applied_attenuation_db(tone(3)), 1.0);
        for _ in 0..3 {
            relay.on_transmission_start();
        }
        assert_eq!(relay.applied_attenuation_db(tone(3)), 0.0);
    }

    #[test]
    fn config_validation() {
        let bad = RelayConfig {
            gain_forward_db: 91.0,
            ..Default::default()
        };
        assert_eq!(bad.validate().unwrap_err(), RelayError::GainTooHigh(91.0));
        let bits = RelayConfig {
            phase_bits: Some(13),
            ..Default::default()
        };
        assert_eq!(bits.validate().unwrap_err(), RelayError::PhaseBits(13));
        let reaction = RelayConfig {
            reaction_delay_us: -0.1,
            ..Default::default()
        };
        assert_eq!(reaction.validate().unwrap_err(), RelayError::NegativeReaction(-0.1));
    }
}
