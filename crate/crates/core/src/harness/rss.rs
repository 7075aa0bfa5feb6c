//! Received-signal-strength proximity decisions of a passive keyless entry
//! system, with and without the relay in the loop.
//!
//! The car unlocks once the key's signal reaches the unlock threshold and
//! locks again only after it falls below the (lower) lock threshold. The
//! engine may start while the signal exceeds a third, higher threshold.

use super::config::ScenarioConfig;
use crate::channel::{amplitude_to_db, dbm_to_mw, mw_to_dbm, ChannelModelSpec, Point};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RssThresholds {
    pub unlock_dbm: f64,
    pub lock_dbm: f64,
    pub engine_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CarState {
    Locked,
    Unlocked,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Locked,
    Unlocked,
    /// Unlocked and close enough to start the engine.
    Engine,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Locked => "locked",
            Decision::Unlocked => "unlocked",
            Decision::Engine => "engine",
        }
    }
}

/// Hysteresis state machine of the car.
#[derive(Debug, Clone)]
pub struct AccessController {
    thresholds: RssThresholds,
    state: CarState,
}

impl AccessController {
    pub fn new(thresholds: RssThresholds) -> Self {
        Self {
            thresholds,
            state: CarState::Locked,
        }
    }

    pub fn state(&self) -> CarState {
        self.state
    }

    pub fn observe(&mut self, rss_dbm: f64) -> Decision {
        let t = self.thresholds;
        self.state = match self.state {
            CarState::Locked if rss_dbm >= t.unlock_dbm => CarState::Unlocked,
            CarState::Unlocked if rss_dbm < t.lock_dbm => CarState::Locked,
            s => s,
        };
        match self.state {
            CarState::Locked => Decision::Locked,
            CarState::Unlocked if rss_dbm >= t.engine_dbm => Decision::Engine,
            CarState::Unlocked => Decision::Unlocked,
        }
    }
}

/// Link budget between key, car and relay stations.
///
/// The car sits at node `A`'s position. With the relay, the key is placed
/// `x` metres behind the secondary antenna, on the far side from the car.
#[derive(Debug, Clone)]
pub struct RssModel {
    spec: ChannelModelSpec,
    freq_hz: f64,
    tx_dbm: f64,
    car: Point,
    primary: Point,
    secondary: Point,
    relay_gain_db: f64,
    backhaul_loss_db: f64,
}

impl RssModel {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        Self {
            spec: cfg.channel.spec(),
            freq_hz: cfg.rss.freq_hz,
            tx_dbm: cfg.radio.tx_power_dbm,
            car: cfg.geometry.a,
            primary: cfg.geometry.primary,
            secondary: cfg.geometry.secondary,
            relay_gain_db: cfg.relay.gain_reverse_db,
            backhaul_loss_db: cfg.relay.backhaul_loss_db(),
        }
    }

    fn loss_db(&self, d: f64) -> f64 {
        -amplitude_to_db(self.spec.path_gain(d, self.freq_hz))
    }

    /// Key-to-car power with no relay present.
    pub fn direct_dbm(&self, d_car_m: f64, body_loss_db: f64) -> f64 {
        self.tx_dbm - body_loss_db - self.loss_db(d_car_m)
    }

    /// Key position `x` metres behind the secondary antenna.
    pub fn key_position(&self, x_m: f64) -> Point {
        let (dx, dy) = (self.secondary.x - self.primary.x, self.secondary.y - self.primary.y);
        let norm = dx.hypot(dy);
        let (ux, uy) = if norm > 0.0 { (dx / norm, dy / norm) } else { (1.0, 0.0) };
        self.secondary.offset(x_m * ux, x_m * uy)
    }

    /// Relayed power plus the direct leak, added incoherently.
    pub fn relayed_dbm(&self, x_m: f64, body_loss_db: f64) -> f64 {
        let ant = 2.0 * self.spec.relay_antenna_gain_dbi;
        let relayed = self.tx_dbm - body_loss_db - self.loss_db(x_m) + self.relay_gain_db - self.backhaul_loss_db
            - self.loss_db(self.primary.distance(&self.car))
            + ant;
        let direct = self.direct_dbm(self.key_position(x_m).distance(&self.car), body_loss_db);
        mw_to_dbm(dbm_to_mw(relayed) + dbm_to_mw(direct))
    }

    /// Configured thresholds, or calibrated from the first body preset.
    pub fn thresholds(&self, cfg: &ScenarioConfig) -> RssThresholds {
        let r = &cfg.rss;
        let reference = r.presets[0].loss_db;
        RssThresholds {
            unlock_dbm: r
                .unlock_dbm
                .unwrap_or_else(|| self.direct_dbm(r.calibrate_unlock_m, reference)),
            lock_dbm: r.lock_dbm.unwrap_or_else(|| self.direct_dbm(r.calibrate_lock_m, reference)),
            engine_dbm: r
                .engine_dbm
                .unwrap_or_else(|| self.direct_dbm(r.calibrate_engine_m, reference)),
        }
    }
}

/// Largest distance in `[lo, hi]` where a decreasing `rss` still reaches
/// `threshold_dbm`; `None` if it never does.
pub fn boundary(rss: impl Fn(f64) -> f64, threshold_dbm: f64, lo: f64, hi: f64) -> Option<f64> {
    if rss(lo) < threshold_dbm {
        return None;
    }
    if rss(hi) >= threshold_dbm {
        return Some(hi);
    }
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if rss(m) >= threshold_dbm {
            a = m;
        } else {
            b = m;
        }
        if b - a < 1e-9 {
            break;
        }
    }
    Some(0.5 * (a + b))
}
