//! Scenario files.
//!
//! A scenario is TOML written as flat `section.key = value` lines. Every key
//! has a default except `id`, `kind` and `seed`; the resolved configuration
//! (defaults included) is echoed next to every result by [`ScenarioConfig::to_flat_toml`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::channel::{ChannelModelSpec, Geometry, ModelKind, Point, Tap};
use crate::detection::MetricDomain;
use crate::mcpr::{MeasurementNoise, ToneSweep};
use crate::relay::{Attenuator, FrequencyInference, RelayConfig, RelayMode};
use crate::tdd::StartPattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sweep,
    Ota,
    Reciprocity,
    Rss,
    TddTrace,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::Ota => "ota",
            ExperimentKind::Reciprocity => "reciprocity",
            ExperimentKind::Rss => "rss",
            ExperimentKind::TddTrace => "tdd-trace",
        }
    }

    /// Scenario shipped with the crate for this experiment.
    pub fn builtin_scenario(self) -> &'static str {
        match self {
            ExperimentKind::Sweep => include_str!("../../../../scenarios/sweep.toml"),
            ExperimentKind::Ota => include_str!("../../../../scenarios/ota.toml"),
            ExperimentKind::Reciprocity => include_str!("../../../../scenarios/reciprocity.toml"),
            ExperimentKind::Rss => include_str!("../../../../scenarios/rss.toml"),
            ExperimentKind::TddTrace => include_str!("../../../../scenarios/tdd-trace.toml"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub id: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    #[serde(default = "defaults::repetitions")]
    pub repetitions: usize,
    #[serde(default = "defaults::geometry")]
    pub geometry: Geometry,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub sweep: ToneSweep,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub radio: RadioSection,
    #[serde(default)]
    pub relay: RelaySection,
    #[serde(default)]
    pub program: ProgramSection,
    #[serde(default)]
    pub tdd: TddSection,
    #[serde(default)]
    pub detection: DetectionSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub rss: RssSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub model: ModelKind,
    pub path_loss_exponent: f64,
    pub ref_loss_db: f64,
    pub taps: Vec<Tap>,
    pub relay_antenna_gain_dbi: f64,
    /// Whether the direct `A`↔`B` channel is present.
    pub direct_path: bool,
    /// Obstruction loss on the direct channel only.
    pub direct_extra_loss_db: f64,
}

impl Default for ChannelSection {
    fn default() -> Self {
        let spec = ChannelModelSpec::default();
        Self {
            model: spec.model,
            path_loss_exponent: spec.path_loss_exponent,
            ref_loss_db: spec.ref_loss_db,
            taps: spec.taps,
            relay_antenna_gain_dbi: spec.relay_antenna_gain_dbi,
            direct_path: true,
            direct_extra_loss_db: 0.0,
        }
    }
}

impl ChannelSection {
    pub fn spec(&self) -> ChannelModelSpec {
        ChannelModelSpec {
            model: self.model,
            path_loss_exponent: self.path_loss_exponent,
            ref_loss_db: self.ref_loss_db,
            taps: self.taps.clone(),
            relay_antenna_gain_dbi: self.relay_antenna_gain_dbi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseSection {
    pub phase_sigma_rad: f64,
    pub amplitude_sigma_db: f64,
    /// Per-node transmit gain ripple, drawn once per scenario.
    pub device_ripple_db: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        Self {
            phase_sigma_rad: 0.05,
            amplitude_sigma_db: 0.0,
            device_ripple_db: 0.5,
        }
    }
}

impl NoiseSection {
    pub fn measurement(&self) -> MeasurementNoise {
        MeasurementNoise {
            phase_sigma_rad: self.phase_sigma_rad,
            amplitude_sigma_db: self.amplitude_sigma_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioSection {
    pub tx_power_dbm: f64,
    pub rx_sensitivity_dbm: f64,
}

impl Default for RadioSection {
    fn default() -> Self {
        Self {
            tx_power_dbm: 0.0,
            rx_sensitivity_dbm: -95.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrimaryLink {
    /// `A` radiates to the primary antenna.
    #[default]
    Air,
    /// `A`'s RF port is wired to the relay.
    Cable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RelaySection {
    pub enabled: bool,
    pub mode: RelayMode,
    pub gain_forward_db: f64,
    pub gain_reverse_db: f64,
    pub delay_ns: f64,
    pub detector_threshold_dbm: f64,
    pub detector_hysteresis_db: f64,
    pub reaction_us: f64,
    /// Phase shifter resolution; 0 selects an ideal continuous shifter.
    pub phase_bits: u8,
    pub attenuator_step_db: f64,
    pub attenuator_range_db: f64,
    pub equalize: bool,
    /// Per-tone gain tolerance of each relay path, drawn once per scenario.
    pub path_tolerance_db: f64,
    pub primary_link: PrimaryLink,
    pub primary_cable_loss_db: f64,
    /// Cable between the two relay stations.
    pub backhaul_length_m: f64,
    pub backhaul_velocity_factor: f64,
    pub backhaul_loss_db_per_m: f64,
    /// Splitters, switches and connectors, per direction.
    pub insertion_loss_db: f64,
}

impl Default for RelaySection {
    fn default() -> Self {
        let hw = RelayConfig::default();
        Self {
            enabled: true,
            mode: hw.mode,
            gain_forward_db: hw.gain_forward_db,
            gain_reverse_db: hw.gain_reverse_db,
            delay_ns: hw.delay_ns,
            detector_threshold_dbm: hw.detector_threshold_dbm,
            detector_hysteresis_db: hw.detector_hysteresis_db,
            reaction_us: hw.reaction_delay_us,
            phase_bits: 6,
            attenuator_step_db: hw.attenuator.step_db,
            attenuator_range_db: hw.attenuator.range_db,
            equalize: false,
            path_tolerance_db: 0.0,
            primary_link: PrimaryLink::Air,
            primary_cable_loss_db: 30.0,
            backhaul_length_m: 0.0,
            backhaul_velocity_factor: 1.0,
            backhaul_loss_db_per_m: 0.0,
            insertion_loss_db: 0.0,
        }
    }
}

impl RelaySection {
    /// Hardware model without per-tone ripple.
    pub fn hardware(&self) -> RelayConfig {
        RelayConfig {
            mode: self.mode,
            gain_forward_db: self.gain_forward_db,
            gain_reverse_db: self.gain_reverse_db,
            delay_ns: self.delay_ns,
            detector_threshold_dbm: self.detector_threshold_dbm,
            detector_hysteresis_db: self.detector_hysteresis_db,
            reaction_delay_us: self.reaction_us,
            phase_bits: (self.phase_bits != 0).then_some(self.phase_bits),
            attenuator: Attenuator {
                step_db: self.attenuator_step_db,
                range_db: self.attenuator_range_db,
            },
            phase_shifter_enabled: true,
            equalizer_enabled: self.equalize,
            forward_ripple_db: Vec::new(),
            reverse_ripple_db: Vec::new(),
        }
    }

    /// Electrical length of the backhaul cable.
    pub fn backhaul_electrical_m(&self) -> f64 {
        self.backhaul_length_m / self.backhaul_velocity_factor
    }

    pub fn backhaul_loss_db(&self) -> f64 {
        self.backhaul_length_m * self.backhaul_loss_db_per_m + self.insertion_loss_db
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProgramSection {
    pub enabled: bool,
    pub d_set_m: f64,
    /// Attacker's belief of the unmanipulated distance. Omit to derive it
    /// from the scene geometry.
    pub believed_distance_m: Option<f64>,
    /// When deriving the belief, include the relay's own delay bias.
    pub self_compensate: bool,
    pub inference: FrequencyInference,
}

impl Default for ProgramSection {
    fn default() -> Self {
        Self {
            enabled: true,
            d_set_m: 2.0,
            believed_distance_m: None,
            self_compensate: true,
            inference: FrequencyInference::Count,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterfererSpec {
    pub start_us: f64,
    pub duration_us: f64,
    pub power_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TddSection {
    pub pattern_start_us: f64,
    pub pattern_pulses_us: Vec<f64>,
    pub pattern_gaps_us: Vec<f64>,
    pub pattern_tolerance: f64,
    /// Quiet time between the pattern and the first tone.
    pub sweep_lead_us: f64,
    /// Connection-event traffic before the pattern.
    pub background_interval_us: f64,
    pub background_packet_us: f64,
    /// Delay from the end of an `A` packet to `B`'s reply.
    pub reply_delay_us: f64,
    /// Agreed-upon fake `A` pulses the victim inserts mid-sweep.
    pub fake_pulses: usize,
    pub fake_after_tone: usize,
    /// Repetitions whose start pattern the attacker misses.
    pub missed_pattern_reps: Vec<usize>,
    /// Visit the carriers in a random order drawn per repetition.
    pub randomized_hopping: bool,
    pub interferers: Vec<InterfererSpec>,
}

impl Default for TddSection {
    fn default() -> Self {
        Self {
            pattern_start_us: 12_000.0,
            pattern_pulses_us: vec![328.0, 328.0, 120.0],
            pattern_gaps_us: vec![474.0, 620.0],
            pattern_tolerance: 0.1,
            sweep_lead_us: 500.0,
            background_interval_us: 7_500.0,
            background_packet_us: 80.0,
            reply_delay_us: 150.0,
            fake_pulses: 0,
            fake_after_tone: 20,
            missed_pattern_reps: Vec::new(),
            randomized_hopping: false,
            interferers: Vec::new(),
        }
    }
}

impl TddSection {
    pub fn pattern(&self) -> StartPattern {
        StartPattern {
            pulses_us: self.pattern_pulses_us.clone(),
            gaps_us: self.pattern_gaps_us.clone(),
            tolerance: self.pattern_tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectionSection {
    pub metric_domain: MetricDomain,
    pub calibration_quantile: f64,
    /// Significance level of the two-sample KS comparison.
    pub ks_alpha: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        Self {
            metric_domain: MetricDomain::Db,
            calibration_quantile: 0.99,
            ks_alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Distances of `B` from the secondary antenna.
    pub distances_m: Vec<f64>,
    /// Target distances of the manipulation grid.
    pub d_set_m: Vec<f64>,
    pub include_off: bool,
    pub include_direct: bool,
    /// Node separation of the legitimate reference arm.
    pub legit_separation_m: f64,
    pub equalized_arm: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            distances_m: vec![5.0, 10.0, 23.0],
            d_set_m: vec![1.0, 5.0, 10.0, 25.0, 50.0],
            include_off: true,
            include_direct: true,
            legit_separation_m: 2.0,
            equalized_arm: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyPreset {
    pub name: String,
    /// Extra loss of the phone's links when carried this way.
    pub loss_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RssSection {
    pub freq_hz: f64,
    /// Thresholds in received power. Each omitted one is calibrated from the
    /// matching `calibrate_*_m` distance with the first preset and no relay.
    pub unlock_dbm: Option<f64>,
    pub lock_dbm: Option<f64>,
    pub engine_dbm: Option<f64>,
    pub calibrate_unlock_m: f64,
    pub calibrate_lock_m: f64,
    pub calibrate_engine_m: f64,
    pub presets: Vec<BodyPreset>,
    pub min_distance_m: f64,
    pub max_distance_m: f64,
    pub step_m: f64,
}

impl Default for RssSection {
    fn default() -> Self {
        let preset = |name: &str, loss_db| BodyPreset {
            name: name.to_string(),
            loss_db,
        };
        Self {
            freq_hz: 2.44e9,
            unlock_dbm: None,
            lock_dbm: None,
            engine_dbm: None,
            calibrate_unlock_m: 5.0,
            calibrate_lock_m: 13.0,
            calibrate_engine_m: 2.0,
            presets: vec![
                preset("hand", 0.0),
                preset("jacket", 2.0),
                preset("trouser", 4.0),
                preset("trouser-back", 10.0),
            ],
            min_distance_m: 0.5,
            max_distance_m: 80.0,
            step_m: 0.5,
        }
    }
}

mod defaults {
    use super::*;

    pub fn repetitions() -> usize {
        100
    }

    pub fn geometry() -> Geometry {
        Geometry {
            a: Point::new(-1.0, 0.0),
            b: Point::new(10.0, 0.0),
            primary: Point::new(0.0, 0.0),
            secondary: Point::new(0.0, 0.0),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn builtin(kind: ExperimentKind) -> Self {
        Self::from_toml_str(kind.builtin_scenario()).expect("shipped scenario parses")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.repetitions < 1 {
            return bad("repetitions must be at least 1".into());
        }
        if self.id.trim().is_empty() {
            return bad("id must not be empty".into());
        }
        self.sweep.validate()?;
        self.channel.spec().validate()?;
        self.relay.hardware().validate()?;
        self.tdd.pattern().validate()?;
        let n = &self.noise;
        if [n.phase_sigma_rad, n.amplitude_sigma_db, n.device_ripple_db, self.relay.path_tolerance_db]
            .iter()
            .any(|&x| !(x >= 0.0) || !x.is_finite())
        {
            return bad("noise and tolerance figures must be finite and non-negative".into());
        }
        if !(self.relay.backhaul_velocity_factor > 0.0 && self.relay.backhaul_velocity_factor <= 1.0) {
            return bad("backhaul_velocity_factor must lie in (0, 1]".into());
        }
        let q = self.detection.calibration_quantile;
        if !(q > 0.0 && q < 1.0) {
            return bad(format!("calibration_quantile {q} must lie strictly between 0 and 1"));
        }
        if !(self.detection.ks_alpha > 0.0 && self.detection.ks_alpha < 1.0) {
            return bad("ks_alpha must lie strictly between 0 and 1".into());
        }
        if self.experiment.distances_m.iter().any(|&d| !(d > 0.0)) {
            return bad("experiment distances must be positive".into());
        }
        let r = &self.rss;
        if r.presets.is_empty() {
            return bad("rss needs at least one body preset".into());
        }
        if !(r.step_m > 0.0 && r.min_distance_m > 0.0 && r.max_distance_m > r.min_distance_m) {
            return bad("rss distance sweep must be positive and increasing".into());
        }
        if let (Some(u), Some(l)) = (r.unlock_dbm, r.lock_dbm) {
            if !(u > l) {
                return bad("rss unlock threshold must exceed the lock threshold".into());
            }
        }
        Ok(())
    }

    /// The resolved configuration as flat `dotted.key = value` TOML.
    pub fn to_flat_toml(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines.join("\n") + "\n"
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(table) => {
            for (k, v) in table {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix} = {other}")),
    }
}
