//! Two-way multi-carrier phase ranging.
//!
//! Node `A` sends an unmodulated tone on each carrier of a [`ToneSweep`],
//! node `B` reflects it, and `A` records the accumulated two-way phase.
//! The distance follows from the phase slope over frequency:
//! `d = c0 / (4π) · Δφ / f_step`, evaluated on every adjacent carrier pair and
//! averaged.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{wrap_phase, wrap_signed, ChannelResponse, SPEED_OF_LIGHT};

/// Width of the negative wrap guard, in standard errors of the mean slope.
pub const WRAP_GUARD_SIGMAS: f64 = 6.0;

/// Phase-slope window below zero that is still reported as a (slightly
/// negative) distance instead of aliasing to the far end of the range.
///
/// Zero for noiseless observations, so `[0, R)` maps exactly onto itself.
pub fn wrap_guard_rad(phase_sigma: f64, tones: usize) -> f64 {
    let pairs = tones.saturating_sub(1).max(1) as f64;
    (WRAP_GUARD_SIGMAS * phase_sigma * std::f64::consts::SQRT_2 / pairs.sqrt()).min(PI)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum McprError {
    #[error("sweep needs at least two tones (got {0})")]
    TooFewTones(usize),
    #[error("frequency step must be positive (got {0} Hz)")]
    InvalidStep(f64),
    #[error("start frequency must be positive (got {0} Hz)")]
    InvalidStart(f64),
    #[error("sweep/channel grid mismatch")]
    GridMismatch,
    #[error("noise parameters must be finite and non-negative")]
    InvalidNoise,
}

/// The ordered carriers of one ranging procedure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToneSweep {
    pub tones: usize,
    pub f_start_hz: f64,
    pub f_step_hz: f64,
    /// On-air duration of each tone.
    pub tone_us: f64,
    /// Turnaround gap after each tone.
    pub gap_us: f64,
}

impl Default for ToneSweep {
    fn default() -> Self {
        Self {
            tones: 40,
            f_start_hz: 2.402e9,
            f_step_hz: 1.0e6,
            tone_us: 250.0,
            gap_us: 150.0,
        }
    }
}

impl ToneSweep {
    pub fn new(tones: usize, f_start_hz: f64, f_step_hz: f64) -> Result<Self, McprError> {
        let s = Self {
            tones,
            f_start_hz,
            f_step_hz,
            ..Default::default()
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), McprError> {
        if self.tones < 2 {
            return Err(McprError::TooFewTones(self.tones));
        }
        if !(self.f_step_hz > 0.0) || !self.f_step_hz.is_finite() {
            return Err(McprError::InvalidStep(self.f_step_hz));
        }
        if !(self.f_start_hz > 0.0) || !self.f_start_hz.is_finite() {
            return Err(McprError::InvalidStart(self.f_start_hz));
        }
        Ok(())
    }

    pub fn frequency(&self, index: usize) -> f64 {
        self.f_start_hz + index as f64 * self.f_step_hz
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.tones).map(|i| self.frequency(i)).collect()
    }

    /// One A-tone plus one B-tone, each followed by a turnaround gap.
    pub fn exchange_us(&self) -> f64 {
        2.0 * (self.tone_us + self.gap_us)
    }
}

/// Measurement impairments applied by [`run_sweep`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeasurementNoise {
    /// Standard deviation of the Gaussian noise on each two-way phase.
    pub phase_sigma_rad: f64,
    /// Standard deviation of the log-normal amplitude noise, in dB. Zero
    /// disables it.
    pub amplitude_sigma_db: f64,
}

impl MeasurementNoise {
    pub fn phase_only(phase_sigma_rad: f64) -> Self {
        Self {
            phase_sigma_rad,
            amplitude_sigma_db: 0.0,
        }
    }
}

/// What node `A` (phases, reverse magnitudes) and node `B` (forward
/// magnitudes) observed during one sweep, indexed by carrier.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepObservation {
    pub sweep_id: u64,
    /// Two-way phase per carrier, wrapped to [0, 2π).
    pub phases: Vec<f64>,
    /// `|H_AB(f_i)|` as measured by `B`.
    pub mag_ab: Vec<f64>,
    /// `|H_BA(f_i)|` as measured by `A`.
    pub mag_ba: Vec<f64>,
    pub phase_sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceEstimate {
    pub sweep_id: u64,
    pub mean_m: f64,
    /// One estimate per adjacent carrier pair.
    pub pairs_m: Vec<f64>,
}

/// Simulates the tone exchange over the given forward and reverse channels.
pub fn run_sweep<R: Rng + ?Sized>(
    sweep: &ToneSweep,
    forward: &ChannelResponse,
    reverse: &ChannelResponse,
    noise: &MeasurementNoise,
    rng: &mut R,
) -> Result<SweepObservation, McprError> {
    sweep.validate()?;
    let freqs = sweep.frequencies();
    if !forward.same_grid(&freqs) || !reverse.same_grid(&freqs) {
        return Err(McprError::GridMismatch);
    }
    let phase_noise = normal(noise.phase_sigma_rad)?;
    let amp_noise = normal(noise.amplitude_sigma_db)?;

    let n = sweep.tones;
    let mut phases = Vec::with_capacity(n);
    let mut mag_ab = Vec::with_capacity(n);
    let mut mag_ba = Vec::with_capacity(n);
    for i in 0..n {
        let e = phase_noise.as_ref().map_or(0.0, |d| d.sample(rng));
        phases.push(wrap_phase(forward.phases()[i] + reverse.phases()[i] + e));
        let (ga, gb) = match &amp_noise {
            Some(d) => (db_factor(d.sample(rng)), db_factor(d.sample(rng))),
            None => (1.0, 1.0),
        };
        mag_ab.push(forward.magnitudes()[i] * ga);
        mag_ba.push(reverse.magnitudes()[i] * gb);
    }
    Ok(SweepObservation {
        sweep_id: 0,
        phases,
        mag_ab,
        mag_ba,
        phase_sigma: noise.phase_sigma_rad,
    })
}

/// Phase-slope distance estimate.
///
/// Each adjacent-pair phase difference is unwrapped into a ±π window around
/// the circular mean of all differences, so the arithmetic mean telescopes to
/// `(φ_N − φ_1) / (N − 1)` whenever per-pair deviations stay below π.
pub fn estimate_distance(obs: &SweepObservation, sweep: &ToneSweep) -> DistanceEstimate {
    let scale = meters_per_radian(sweep.f_step_hz);
    let diffs: Vec<f64> = obs.phases.windows(2).map(|w| wrap_phase(w[1] - w[0])).collect();
    let (s, c) = diffs
        .iter()
        .fold((0.0, 0.0), |(s, c), d| (s + d.sin(), c + d.cos()));
    let guard = wrap_guard_rad(obs.phase_sigma, obs.phases.len());
    let reference = wrap_phase(s.atan2(c) + guard) - guard;
    let pairs_m: Vec<f64> = diffs
        .iter()
        .map(|&d| scale * (reference + wrap_signed(d - reference)))
        .collect();
    let mean_m = if pairs_m.is_empty() {
        0.0
    } else {
        pairs_m.iter().sum::<f64>() / pairs_m.len() as f64
    };
    DistanceEstimate {
        sweep_id: obs.sweep_id,
        mean_m,
        pairs_m,
    }
}

/// Largest distance measurable without phase-wrap aliasing, `c0 / (2 f_step)`.
pub fn unambiguous_range(f_step_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (2.0 * f_step_hz)
}

/// Distance per radian of two-way phase slope, `c0 / (4π f_step)`.
pub fn meters_per_radian(f_step_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * PI * f_step_hz)
}

fn normal(sigma: f64) -> Result<Option<Normal<f64>>, McprError> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(McprError::InvalidNoise);
    }
    if sigma == 0.0 {
        return Ok(None);
    }
    Normal::new(0.0, sigma).map(Some).map_err(|_| McprError::InvalidNoise)
}

fn db_factor(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{delay_phase, Link};
    use std::f64::consts::TAU;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn free_space(sweep: &ToneSweep, d: f64, link: Link) -> ChannelResponse {
        let freqs = sweep.frequencies();
        let phase = freqs.iter().map(|&f| delay_phase(f, d / SPEED_OF_LIGHT)).collect();
        ChannelResponse::from_polar(link, freqs.clone(), vec![1e-4; freqs.len()], phase)
    }

    fn noiseless(sweep: &ToneSweep, d: f64) -> DistanceEstimate {
        let fwd = free_space(sweep, d, Link::A_TO_B);
        let rev = free_space(sweep, d, Link::B_TO_A);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = run_sweep(sweep, &fwd, &rev, &MeasurementNoise::default(), &mut rng).unwrap();
        estimate_distance(&obs, sweep)
    }

    #[test]
    fn identity_channels_give_zero_phase() {
        let sweep = ToneSweep::default();
        let id = ChannelResponse::identity(Link::A_TO_B, &sweep.frequencies());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = run_sweep(&sweep, &id, &id, &MeasurementNoise::default(), &mut rng).unwrap();
        assert!(obs.phases.iter().all(|&p| p == 0.0));
        assert_eq!(estimate_distance(&obs, &sweep).mean_m, 0.0);
    }

    #[test]
    fn two_way_phase_at_23_m() {
        let sweep = ToneSweep::default();
        let fwd = free_space(&sweep, 23.0, Link::A_TO_B);
        let rev = free_space(&sweep, 23.0, Link::B_TO_A);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = run_sweep(&sweep, &fwd, &rev, &MeasurementNoise::default(), &mut rng).unwrap();
        for (i, &p) in obs.phases.iter().enumerate() {
            let expected = (4.0 * PI * sweep.frequency(i) * 23.0 / SPEED_OF_LIGHT).rem_euclid(TAU);
            assert!(wrap_signed(p - expected).abs() < 1e-9, "tone {i}");
        }
    }

    #[test]
    fn seeded_noise_is_reproducible() {
        let sweep = ToneSweep::default();
        let fwd = free_space(&sweep, 7.0, Link::A_TO_B);
        let rev = free_space(&sweep, 7.0, Link::B_TO_A);
        let noise = MeasurementNoise {
            phase_sigma_rad: 0.05,
            amplitude_sigma_db: 0.5,
        };
        let a = run_sweep(&sweep, &fwd, &rev, &noise, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = run_sweep(&sweep, &fwd, &rev, &noise, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let bits = |o: &SweepObservation| {
            o.phases
                .iter()
                .chain(&o.mag_ab)
                .chain(&o.mag_ba)
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = run_sweep(&sweep, &fwd, &rev, &noise, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn grid_mismatch_rejected() {
        let sweep = ToneSweep::default();
        let other = ToneSweep {
            f_step_hz: 2e6,
            ..ToneSweep::default()
        };
        let fwd = free_space(&other, 3.0, Link::A_TO_B);
        let rev = free_space(&sweep, 3.0, Link::B_TO_A);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(
            run_sweep(&sweep, &fwd, &rev, &MeasurementNoise::default(), &mut rng).unwrap_err(),
            McprError::GridMismatch
        );
    }

    #[test]
    fn estimates_23_m() {
        let est = noiseless(&ToneSweep::default(), 23.0);
        assert!((est.mean_m - 23.0).abs() < 1e-6);
        assert_eq!(est.pairs_m.len(), 39);
    }

    #[test]
    fn wraps_past_unambiguous_range() {
        let est = noiseless(&ToneSweep::default(), 160.0);
        let expected = 160.0 - unambiguous_range(1e6);
        assert!((expected - 10.104).abs() < 1e-3);
        assert!((est.mean_m - expected).abs() < 1e-6);
    }

    #[test]
    fn unambiguous_range_values() {
        assert!((unambiguous_range(1e6) - 149.896).abs() < 1e-3);
        assert!((unambiguous_range(2e6) - 74.948).abs() < 1e-3);
        assert_eq!(unambiguous_range(4e6) * 2.0, unambiguous_range(2e6));
    }

    #[test]
    fn constant_phases_mean_zero() {
        let sweep = ToneSweep::default();
        let obs = SweepObservation {
            sweep_id: 3,
            phases: vec![1.234; 40],
            mag_ab: vec![1.0; 40],
            mag_ba: vec![1.0; 40],
            phase_sigma: 0.0,
        };
        let est = estimate_distance(&obs, &sweep);
        assert_eq!(est.mean_m, 0.0);
        assert_eq!(est.sweep_id, 3);
    }

    #[test]
    fn near_zero_distance_does_not_alias_under_noise() {
        let sweep = ToneSweep::default();
        let fwd = free_space(&sweep, 0.25, Link::A_TO_B);
        let rev = free_space(&sweep, 0.25, Link::B_TO_A);
        let noise = MeasurementNoise::phase_only(0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..500 {
            let obs = run_sweep(&sweep, &fwd, &rev, &noise, &mut rng).unwrap();
            let est = estimate_distance(&obs, &sweep);
            assert!((est.mean_m - 0.25).abs() < 0.5, "{}", est.mean_m);
        }
    }

    #[test]
    fn sweep_validation() {
        assert_eq!(ToneSweep::new(1, 2.4e9, 1e6).unwrap_err(), McprError::TooFewTones(1));
        assert_eq!(ToneSweep::new(40, 2.4e9, 0.0).unwrap_err(), McprError::InvalidStep(0.0));
        let s = ToneSweep::new(40, 2.402e9, 1e6).unwrap();
        assert_eq!(s.frequency(39), 2.441e9);
    }
}
