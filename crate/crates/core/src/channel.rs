//! Reciprocal propagation model.
//!
//! Produces the complex transfer function between two antennas sampled on a
//! frequency grid. Phases follow the phase-delay convention used everywhere
//! in this crate: a path of length `d` contributes `+2π f d / c0`, so the
//! stored phase grows with distance and two-way phases are plain sums.
//!
//! The medium is noiseless. Swapping the endpoints of [`propagate`] yields a
//! bit-identical response; every asymmetry seen by the ranging nodes is added
//! later (device ripple, measurement noise, the relay).

use std::f64::consts::TAU;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Vacuum speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

const EXPONENT_RANGE: (f64, f64) = (1.5, 6.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("coincident antennas: {0} and {1} are at the same position")]
    CoincidentAntennas(Antenna, Antenna),
    #[error("link endpoints must differ (got {0} twice)")]
    SelfLink(Antenna),
    #[error("frequency list must be non-empty and strictly positive")]
    InvalidFrequencies,
    #[error("frequency not sampled: {0} Hz")]
    FrequencyNotSampled(f64),
    #[error("path-loss exponent {0} outside [1.5, 6.0]")]
    ExponentOutOfRange(f64),
    #[error("multipath taps cancel the direct path at {0} Hz")]
    MultipathNull(f64),
    #[error("frequency grids differ between cascaded responses")]
    GridMismatch,
}

/// Planar position in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Euclidean distance. `hypot` works on absolute differences, so the
    /// result is bit-identical for either argument order.
    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn offset(&self, dx: f64, dy: f64) -> Point {
        Point::new(self.x + dx, self.y + dy)
    }
}

impl From<[f64; 2]> for Point {
    fn from(p: [f64; 2]) -> Self {
        Point::new(p[0], p[1])
    }
}

impl From<Point> for [f64; 2] {
    fn from(p: Point) -> Self {
        [p.x, p.y]
    }
}

/// The four antennas of a relay scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Antenna {
    /// Interrogating node (car, lock, ranging initiator).
    A,
    /// Reflecting node (phone, ranging responder).
    B,
    /// Relay station close to `A`.
    Primary,
    /// Relay station close to `B`.
    Secondary,
}

impl Antenna {
    pub fn is_relay(self) -> bool {
        matches!(self, Antenna::Primary | Antenna::Secondary)
    }
}

impl fmt::Display for Antenna {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Antenna::A => "A",
            Antenna::B => "B",
            Antenna::Primary => "primary",
            Antenna::Secondary => "secondary",
        };
        f.write_str(s)
    }
}

/// Direction tag of a response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Link {
    pub from: Antenna,
    pub to: Antenna,
}

impl Link {
    pub const A_TO_B: Link = Link::new(Antenna::A, Antenna::B);
    pub const B_TO_A: Link = Link::new(Antenna::B, Antenna::A);

    pub const fn new(from: Antenna, to: Antenna) -> Self {
        Self { from, to }
    }

    pub fn reversed(self) -> Self {
        Link::new(self.to, self.from)
    }
}

/// Antenna positions of one scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub a: Point,
    pub b: Point,
    pub primary: Point,
    pub secondary: Point,
}

impl Geometry {
    pub fn position(&self, antenna: Antenna) -> Point {
        match antenna {
            Antenna::A => self.a,
            Antenna::B => self.b,
            Antenna::Primary => self.primary,
            Antenna::Secondary => self.secondary,
        }
    }

    pub fn distance(&self, from: Antenna, to: Antenna) -> f64 {
        self.position(from).distance(&self.position(to))
    }
}

/// One excess-delay echo of a tap-delay line, relative to the direct ray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tap {
    pub delay_ns: f64,
    pub re: f64,
    pub im: f64,
}

impl Tap {
    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    /// Friis law, frequency dependent.
    #[default]
    FreeSpace,
    /// `ref_loss_db + 10 n log10(d)`, frequency flat.
    LogDistance,
    /// Log-distance direct ray plus a coherent tap-delay line.
    TapDelay,
}

/// Loss law and multipath description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelModelSpec {
    pub model: ModelKind,
    pub path_loss_exponent: f64,
    /// Loss at the 1 m reference distance, dB.
    pub ref_loss_db: f64,
    pub taps: Vec<Tap>,
    /// Gain of each relay antenna. Nodes `A` and `B` are isotropic.
    pub relay_antenna_gain_dbi: f64,
}

impl Default for ChannelModelSpec {
    fn default() -> Self {
        Self {
            model: ModelKind::FreeSpace,
            path_loss_exponent: 2.0,
            ref_loss_db: 40.0,
            taps: Vec::new(),
            relay_antenna_gain_dbi: 0.0,
        }
    }
}

impl ChannelModelSpec {
    pub fn validate(&self) -> Result<(), ChannelError> {
        let n = self.path_loss_exponent;
        if !(EXPONENT_RANGE.0..=EXPONENT_RANGE.1).contains(&n) {
            return Err(ChannelError::ExponentOutOfRange(n));
        }
        Ok(())
    }

    fn antenna_gain_db(&self, antenna: Antenna) -> f64 {
        if antenna.is_relay() {
            self.relay_antenna_gain_dbi
        } else {
            0.0
        }
    }

    /// Magnitude of the direct ray at distance `d`, antenna gains excluded.
    pub fn path_gain(&self, d: f64, f: f64) -> f64 {
        match self.model {
            ModelKind::FreeSpace => SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * d * f),
            ModelKind::LogDistance | ModelKind::TapDelay => {
                db_to_amplitude(-(self.ref_loss_db + 10.0 * self.path_loss_exponent * d.log10()))
            }
        }
    }
}

/// Complex transfer function on a frequency grid, stored as magnitude and
/// wrapped phase-delay.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelResponse {
    pub link: Link,
    freqs: Vec<f64>,
    magnitude: Vec<f64>,
    phase: Vec<f64>,
}

impl ChannelResponse {
    /// Builds a response from complex gains. Phases are wrapped to [0, 2π).
    pub fn from_gains(link: Link, freqs: Vec<f64>, gains: &[Complex64]) -> Self {
        assert_eq!(freqs.len(), gains.len(), "one gain per frequency");
        let magnitude = gains.iter().map(|g| g.norm()).collect();
        let phase = gains.iter().map(|g| wrap_phase(g.arg())).collect();
        Self {
            link,
            freqs,
            magnitude,
            phase,
        }
    }

    pub fn from_polar(link: Link, freqs: Vec<f64>, magnitude: Vec<f64>, phase: Vec<f64>) -> Self {
        assert_eq!(freqs.len(), magnitude.len());
        assert_eq!(freqs.len(), phase.len());
        let phase = phase.into_iter().map(wrap_phase).collect();
        Self {
            link,
            freqs,
            magnitude,
            phase,
        }
    }

    /// A wired path: flat loss and a pure delay.
    pub fn cable(link: Link, freqs: &[f64], loss_db: f64, delay_ns: f64) -> Self {
        let mag = db_to_amplitude(-loss_db);
        let magnitude = vec![mag; freqs.len()];
        let phase = freqs.iter().map(|&f| delay_phase(f, delay_ns * 1e-9)).collect();
        Self {
            link,
            freqs: freqs.to_vec(),
            magnitude,
            phase,
        }
    }

    /// Unit gain, zero phase.
    pub fn identity(link: Link, freqs: &[f64]) -> Self {
        Self::cable(link, freqs, 0.0, 0.0)
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitude
    }

    pub fn phases(&self) -> &[f64] {
        &self.phase
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    pub fn gain(&self, index: usize) -> Complex64 {
        Complex64::from_polar(self.magnitude[index], self.phase[index])
    }

    pub fn gains(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.gain(i)).collect()
    }

    pub fn index_of(&self, f: f64) -> Option<usize> {
        self.freqs.iter().position(|&x| same_frequency(x, f))
    }

    /// True when both responses share a frequency grid.
    pub fn same_grid(&self, freqs: &[f64]) -> bool {
        self.freqs.len() == freqs.len()
            && self.freqs.iter().zip(freqs).all(|(&a, &b)| same_frequency(a, b))
    }

    /// Series connection of `self` followed by `next`.
    pub fn cascade(&self, next: &ChannelResponse) -> Result<ChannelResponse, ChannelError> {
        if !self.same_grid(&next.freqs) {
            return Err(ChannelError::GridMismatch);
        }
        let gains: Vec<Complex64> = (0..self.len()).map(|i| self.gain(i) * next.gain(i)).collect();
        Ok(ChannelResponse::from_gains(
            Link::new(self.link.from, next.link.to),
            self.freqs.clone(),
            &gains,
        ))
    }
}

/// Response of the propagation channel from `from` to `to`.
pub fn propagate(
    geom: &Geometry,
    spec: &ChannelModelSpec,
    from: Antenna,
    to: Antenna,
    freqs: &[f64],
) -> Result<ChannelResponse, ChannelError> {
    if from == to {
        return Err(ChannelError::SelfLink(from));
    }
    if freqs.is_empty() || freqs.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
        return Err(ChannelError::InvalidFrequencies);
    }
    spec.validate()?;
    let d = geom.distance(from, to);
    if d == 0.0 {
        let (lo, hi) = if from < to { (from, to) } else { (to, from) };
        return Err(ChannelError::CoincidentAntennas(lo, hi));
    }
    let antenna_db = spec.antenna_gain_db(from) + spec.antenna_gain_db(to);
    let antenna_gain = db_to_amplitude(antenna_db);

    let mut magnitude = Vec::with_capacity(freqs.len());
    let mut phase = Vec::with_capacity(freqs.len());
    for &f in freqs {
        let direct = delay_phase(f, d / SPEED_OF_LIGHT);
        let base = spec.path_gain(d, f) * antenna_gain;
        match spec.model {
            ModelKind::TapDelay if !spec.taps.is_empty() => {
                let echo: Complex64 = spec
                    .taps
                    .iter()
                    .map(|t| t.gain() * Complex64::from_polar(1.0, delay_phase(f, t.delay_ns * 1e-9)))
                    .sum();
                let factor = Complex64::new(1.0, 0.0) + echo;
                if factor.norm() == 0.0 {
                    return Err(ChannelError::MultipathNull(f));
                }
                magnitude.push(base * factor.norm());
                phase.push(wrap_phase(direct + factor.arg()));
            }
            _ => {
                magnitude.push(base);
                phase.push(direct);
            }
        }
    }
    Ok(ChannelResponse {
        link: Link::new(from, to),
        freqs: freqs.to_vec(),
        magnitude,
        phase,
    })
}

/// `tx_power_dbm + 20 log10 |H(f)|`.
pub fn received_power_dbm(tx_power_dbm: f64, resp: &ChannelResponse, f: f64) -> Result<f64, ChannelError> {
    let i = resp.index_of(f).ok_or(ChannelError::FrequencyNotSampled(f))?;
    Ok(tx_power_dbm + amplitude_to_db(resp.magnitude[i]))
}

/// Phase accumulated over a delay of `seconds` at `f`, wrapped to [0, 2π).
///
/// Reduces the cycle count before scaling so large `f·t` products keep
/// their fractional precision.
pub fn delay_phase(f: f64, seconds: f64) -> f64 {
    let cycles = f * seconds;
    let frac = cycles - cycles.floor();
    wrap_phase(TAU * frac)
}

/// Wraps any angle to [0, 2π).
pub fn wrap_phase(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Wraps any angle to (-π, π].
pub fn wrap_signed(x: f64) -> f64 {
    let w = wrap_phase(x);
    if w > std::f64::consts::PI {
        w - TAU
    } else {
        w
    }
}

pub fn db_to_amplitude(db: f64) -> f64 {
    10f64.powf(db / 20.0)
}

pub fn amplitude_to_db(a: f64) -> f64 {
    20.0 * a.log10()
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

fn same_frequency(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(d: f64) -> Geometry {
        Geometry {
            a: Point::new(0.0, 0.0),
            b: Point::new(d, 0.0),
            primary: Point::new(0.5, 3.0),
            secondary: Point::new(d - 0.5, -3.0),
        }
    }

    fn circular_gap(a: f64, b: f64) -> f64 {
        wrap_signed(a - b).abs()
    }

    #[test]
    fn one_wavelength_has_zero_phase() {
        let f = 2.44e9;
        let geom = line(SPEED_OF_LIGHT / f);
        let r = propagate(&geom, &ChannelModelSpec::default(), Antenna::A, Antenna::B, &[f]).unwrap();
        assert!(circular_gap(r.phases()[0], 0.0) < 1e-9);
    }

    #[test]
    fn phase_at_23_m() {
        let f = 2.402e9;
        let r = propagate(&line(23.0), &ChannelModelSpec::default(), Antenna::A, Antenna::B, &[f]).unwrap();
        // direct evaluation, reduced in radians rather than cycles
        let expected = (TAU * f * 23.0 / SPEED_OF_LIGHT).rem_euclid(TAU);
        assert!(circular_gap(r.phases()[0], expected) < 1e-9);
        assert!((0.0..TAU).contains(&r.phases()[0]));
    }

    #[test]
    fn log_distance_decade_is_20_db() {
        let spec = ChannelModelSpec {
            model: ModelKind::LogDistance,
            ..Default::default()
        };
        let f = [2.44e9];
        let near = propagate(&line(1.0), &spec, Antenna::A, Antenna::B, &f).unwrap();
        let far = propagate(&line(10.0), &spec, Antenna::A, Antenna::B, &f).unwrap();
        let ratio = far.magnitudes()[0] / near.magnitudes()[0];
        assert!((ratio - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coincident_antennas_rejected() {
        let mut g = line(5.0);
        g.secondary = g.b;
        let err = propagate(&g, &ChannelModelSpec::default(), Antenna::B, Antenna::Secondary, &[1e9]).unwrap_err();
        assert_eq!(err, ChannelError::CoincidentAntennas(Antenna::B, Antenna::Secondary));
    }

    #[test]
    fn bad_inputs_rejected() {
        let g = line(5.0);
        let spec = ChannelModelSpec::default();
        assert!(matches!(
            propagate(&g, &spec, Antenna::A, Antenna::A, &[1e9]),
            Err(ChannelError::SelfLink(Antenna::A))
        ));
        assert_eq!(
            propagate(&g, &spec, Antenna::A, Antenna::B, &[]).unwrap_err(),
            ChannelError::InvalidFrequencies
        );
        assert_eq!(
            propagate(&g, &spec, Antenna::A, Antenna::B, &[1e9, -1.0]).unwrap_err(),
            ChannelError::InvalidFrequencies
        );
        let steep = ChannelModelSpec {
            path_loss_exponent: 7.0,
            ..Default::default()
        };
        assert_eq!(
            propagate(&g, &steep, Antenna::A, Antenna::B, &[1e9]).unwrap_err(),
            ChannelError::ExponentOutOfRange(7.0)
        );
    }

    #[test]
    fn received_power_examples() {
        let freqs = [2.44e9];
        let unit = ChannelResponse::identity(Link::A_TO_B, &freqs);
        assert_eq!(received_power_dbm(-12.5, &unit, 2.44e9).unwrap(), -12.5);

        let milli = ChannelResponse::cable(Link::A_TO_B, &freqs, 60.0, 0.0);
        assert!((received_power_dbm(0.0, &milli, 2.44e9).unwrap() + 60.0).abs() < 1e-9);

        let tenth = ChannelResponse::cable(Link::A_TO_B, &freqs, 20.0, 0.0);
        assert!((received_power_dbm(10.0, &tenth, 2.44e9).unwrap() + 10.0).abs() < 1e-9);

        assert_eq!(
            received_power_dbm(0.0, &unit, 2.45e9).unwrap_err(),
            ChannelError::FrequencyNotSampled(2.45e9)
        );
    }

    #[test]
    fn taps_add_coherent_echo() {
        let spec = ChannelModelSpec {
            model: ModelKind::TapDelay,
            taps: vec![Tap {
                delay_ns: 10.0,
                re: 0.5,
                im: 0.0,
            }],
            ..Default::default()
        };
        // 10 ns at 2.45 GHz is 24.5 cycles: the echo is in anti-phase
        let r = propagate(&line(3.0), &spec, Antenna::A, Antenna::B, &[2.45e9]).unwrap();
        let plain = ChannelModelSpec {
            model: ModelKind::LogDistance,
            ..Default::default()
        };
        let p = propagate(&line(3.0), &plain, Antenna::A, Antenna::B, &[2.45e9]).unwrap();
        assert!((r.magnitudes()[0] / p.magnitudes()[0] - 0.5).abs() < 1e-9);
        assert!(circular_gap(r.phases()[0], p.phases()[0]) < 1e-9);
    }

    #[test]
    fn full_cancellation_is_an_error() {
        let spec = ChannelModelSpec {
            model: ModelKind::TapDelay,
            taps: vec![Tap {
                delay_ns: 0.0,
                re: -1.0,
                im: 0.0,
            }],
            ..Default::default()
        };
        assert!(matches!(
            propagate(&line(3.0), &spec, Antenna::A, Antenna::B, &[2.45e9]),
            Err(ChannelError::MultipathNull(_))
        ));
    }

    #[test]
    fn relay_antenna_gain_applies_per_end() {
        let spec = ChannelModelSpec {
            relay_antenna_gain_dbi: 6.0,
            ..Default::default()
        };
        let g = line(5.0);
        let f = [2.44e9];
        let plain = propagate(&g, &spec, Antenna::A, Antenna::B, &f).unwrap();
        let one = propagate(&g, &spec, Antenna::A, Antenna::Primary, &f).unwrap();
        let zero = propagate(&g, &ChannelModelSpec::default(), Antenna::A, Antenna::Primary, &f).unwrap();
        assert!((amplitude_to_db(one.magnitudes()[0] / zero.magnitudes()[0]) - 6.0).abs() < 1e-9);
        assert!(plain.magnitudes()[0] > 0.0);
    }

    #[test]
    fn cascade_sums_phases() {
        let f = [1e9, 2e9];
        let a = ChannelResponse::cable(Link::new(Antenna::A, Antenna::Primary), &f, 3.0, 1.25);
        let b = ChannelResponse::cable(Link::new(Antenna::Primary, Antenna::B), &f, 4.0, 0.5);
        let c = a.cascade(&b).unwrap();
        assert_eq!(c.link, Link::A_TO_B);
        let expected = ChannelResponse::cable(Link::A_TO_B, &f, 7.0, 1.75);
        for i in 0..2 {
            assert!((c.magnitudes()[i] - expected.magnitudes()[i]).abs() < 1e-12);
            assert!(circular_gap(c.phases()[i], expected.phases()[i]) < 1e-12);
        }
        let other = ChannelResponse::identity(Link::A_TO_B, &[1e9]);
        assert_eq!(a.cascade(&other).unwrap_err(), ChannelError::GridMismatch);
    }

    #[test]
    fn wrap_helpers() {
        assert_eq!(wrap_phase(-1e-300), 0.0);
        assert!((wrap_phase(-0.5) - (TAU - 0.5)).abs() < 1e-15);
        assert!((wrap_signed(TAU - 0.25) + 0.25).abs() < 1e-15);
        assert_eq!(wrap_signed(std::f64::consts::PI), std::f64::consts::PI);
    }
}
