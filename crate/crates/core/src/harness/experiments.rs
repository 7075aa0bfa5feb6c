//! Experiment runners. Each turns one scenario into rows and statistics.

use super::config::{ExperimentKind, ScenarioConfig};
use super::output::{Row, ScenarioResult};
use super::rss::{boundary, AccessController, RssModel};
use super::session::{Bench, Cell, Outcome, Role};
use super::HarnessError;
use crate::channel::{Antenna, Geometry, Point};
use crate::detection::{calibrate_epsilon, ks_critical_value, ks_statistic, median, reciprocity_dissimilarity, verdict};
use crate::relay::RelayMode;
use crate::tdd::{count_tones, detect_sweep_start, EventFate};

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    match cfg.kind {
        ExperimentKind::Sweep => run_manipulation_sweep(cfg),
        ExperimentKind::Ota => run_ota_relay(cfg),
        ExperimentKind::Reciprocity => run_reciprocity_experiment(cfg),
        ExperimentKind::Rss => run_rss_access(cfg),
        ExperimentKind::TddTrace => run_tdd_trace(cfg),
    }
}

/// Unit vector from `from` to `to`, or +x if they coincide.
fn direction(from: Point, to: Point) -> (f64, f64) {
    let (dx, dy) = (to.x - from.x, to.y - from.y);
    let n = dx.hypot(dy);
    if n > 0.0 {
        (dx / n, dy / n)
    } else {
        (1.0, 0.0)
    }
}

/// `B` placed `d` metres past the secondary antenna, away from the primary.
fn b_behind_secondary(geom: &Geometry, d: f64) -> Geometry {
    let (ux, uy) = direction(geom.primary, geom.secondary);
    Geometry {
        b: geom.secondary.offset(d * ux, d * uy),
        ..*geom
    }
}

/// `B` placed `d` metres from `A` along the `A`→`B` axis.
fn b_from_a(geom: &Geometry, d: f64) -> Geometry {
    let (ux, uy) = direction(geom.a, geom.b);
    Geometry {
        b: geom.a.offset(d * ux, d * uy),
        ..*geom
    }
}

fn relay_cell(
    bench: &Bench,
    label: String,
    geom: &Geometry,
    mode: RelayMode,
    equalize: bool,
    d_set: Option<f64>,
) -> Result<Cell, HarnessError> {
    let relay = bench.relay_path(geom, mode, equalize, d_set)?;
    let direct = if bench.cfg.channel.direct_path {
        Some(bench.direct_path(geom)?)
    } else {
        None
    };
    Ok(Cell {
        label,
        d_true_m: relay.path_length_m,
        d_set_m: relay.program.as_ref().map(|p| p.d_set_m),
        direct,
        relay: Some(relay),
    })
}

fn direct_cell(bench: &Bench, label: String, geom: &Geometry) -> Result<Cell, HarnessError> {
    Ok(Cell {
        label,
        d_true_m: geom.distance(Antenna::A, Antenna::B),
        d_set_m: None,
        direct: Some(bench.direct_path(geom)?),
        relay: None,
    })
}

fn ranging_row(cell: &Cell, o: &Outcome, seed: u64) -> Row {
    Row {
        scenario_id: cell.label.clone(),
        rep: o.rep,
        d_true_m: Some(cell.d_true_m),
        d_set_m: cell.d_set_m,
        d_est_m: Some(o.estimate.mean_m),
        seed,
        ..Row::default()
    }
}

fn ranging_result(bench: &Bench, cells: &[Cell]) -> Result<ScenarioResult, HarnessError> {
    let outcomes = bench.run_cells(cells)?;
    let mut result = ScenarioResult::new(bench.cfg.clone());
    for (cell, outs) in cells.iter().zip(&outcomes) {
        result.rows.extend(outs.iter().map(|o| ranging_row(cell, o, bench.cfg.seed)));
        let unlocked = outs.iter().filter(|o| cell.relay.is_some() && !o.locked).count();
        let lost: usize = outs.iter().map(|o| o.lost_tones).sum();
        result.stats.insert(format!("{}.unlocked_reps", cell.label), unlocked as f64);
        result.stats.insert(format!("{}.lost_tones", cell.label), lost as f64);
    }
    Ok(result)
}

/// Distance manipulation grid over `B` distances and target distances,
/// plus relay-off and relay-free reference cells.
pub fn run_manipulation_sweep(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    let bench = Bench::new(cfg.clone())?;
    let ex = &cfg.experiment;
    let mode = cfg.relay.mode;
    let mut cells = Vec::new();
    for &d in &ex.distances_m {
        if ex.include_direct {
            cells.push(direct_cell(&bench, format!("{}/d={d}/direct", cfg.id), &b_from_a(&cfg.geometry, d))?);
        }
        let geom = b_behind_secondary(&cfg.geometry, d);
        if ex.include_off {
            cells.push(relay_cell(&bench, format!("{}/d={d}/off", cfg.id), &geom, mode, cfg.relay.equalize, None)?);
        }
        for &s in &ex.d_set_m {
            let label = format!("{}/d={d}/set={s}", cfg.id);
            cells.push(relay_cell(&bench, label, &geom, mode, cfg.relay.equalize, Some(s))?);
        }
    }
    ranging_result(&bench, &cells)
}

/// Over-the-air relay with a long backhaul: manipulation off, then on.
pub fn run_ota_relay(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    let bench = Bench::new(cfg.clone())?;
    let mode = cfg.relay.mode;
    let mut cells = Vec::new();
    for &d in &cfg.experiment.distances_m {
        let geom = b_behind_secondary(&cfg.geometry, d);
        let direct = bench.direct_power_dbm(&geom)?;
        if direct >= cfg.radio.rx_sensitivity_dbm {
            return Err(HarnessError::Precondition(format!(
                "direct path reaches {direct:.1} dBm at B = {d} m, above the {} dBm sensitivity",
                cfg.radio.rx_sensitivity_dbm
            )));
        }
        if cfg.experiment.include_off {
            cells.push(relay_cell(&bench, format!("{}/d={d}/off", cfg.id), &geom, mode, cfg.relay.equalize, None)?);
        }
        let label = format!("{}/d={d}/on", cfg.id);
        cells.push(relay_cell(&bench, label, &geom, mode, cfg.relay.equalize, Some(cfg.program.d_set_m))?);
    }
    ranging_result(&bench, &cells)
}

/// Reciprocity arms: unidirectional, bidirectional, optionally equalized,
/// and a legitimate relay-free reference at the target distance.
pub fn run_reciprocity_experiment(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    let bench = Bench::new(cfg.clone())?;
    let geom = cfg.geometry;
    let d_set = Some(cfg.program.d_set_m);
    let id = &cfg.id;
    let mut arms = vec![
        ("unidirectional", relay_cell(&bench, format!("{id}/unidirectional"), &geom, RelayMode::ForwardOnly, false, d_set)?),
        ("bidirectional", relay_cell(&bench, format!("{id}/bidirectional"), &geom, RelayMode::Bidirectional, false, d_set)?),
    ];
    if cfg.experiment.equalized_arm {
        arms.push((
            "equalized",
            relay_cell(&bench, format!("{id}/equalized"), &geom, RelayMode::Bidirectional, true, d_set)?,
        ));
    }
    let legit_geom = b_from_a(&geom, cfg.experiment.legit_separation_m);
    arms.push(("legitimate", direct_cell(&bench, format!("{id}/legitimate"), &legit_geom)?));
    for (_, cell) in arms.iter_mut() {
        cell.d_true_m = cell.relay.as_ref().map_or(cell.d_true_m, |_| geom.distance(Antenna::A, Antenna::B));
    }

    let cells: Vec<Cell> = arms.iter().map(|(_, c)| c.clone()).collect();
    let outcomes = bench.run_cells(&cells)?;
    let domain = cfg.detection.metric_domain;
    let samples: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|outs| {
            outs.iter()
                .map(|o| reciprocity_dissimilarity(&o.observation.mag_ab, &o.observation.mag_ba, domain))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, _>>()?;
    let legit = samples.last().expect("legitimate arm present");
    let epsilon = calibrate_epsilon(legit, cfg.detection.calibration_quantile)?;

    let mut result = ScenarioResult::new(cfg.clone());
    result.stats.insert("epsilon".into(), epsilon);
    result.stats.insert(
        "ks_critical".into(),
        ks_critical_value(legit.len(), legit.len(), cfg.detection.ks_alpha),
    );
    for (((name, cell), outs), diss) in arms.iter().zip(&outcomes).zip(&samples) {
        let mut clean = 0usize;
        for (o, &x) in outs.iter().zip(diss) {
            let v = verdict(x, epsilon);
            clean += usize::from(v == crate::detection::Verdict::Clean);
            let mut row = ranging_row(cell, o, cfg.seed);
            row.dissimilarity = Some(x);
            row.verdict = Some(v);
            result.rows.push(row);
        }
        result.stats.insert(format!("median.{name}"), median(diss));
        result.stats.insert(format!("ks.{name}"), ks_statistic(diss, legit));
        result
            .stats
            .insert(format!("clean_fraction.{name}"), clean as f64 / diss.len() as f64);
    }
    Ok(result)
}

/// Received power as a function of key distance.
type RssCurve<'a> = Box<dyn Fn(f64) -> f64 + 'a>;

/// Keyless-entry decisions while the key walks towards the car (or the
/// relay antenna) and away again, for every body preset.
pub fn run_rss_access(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    cfg.validate()?;
    let model = &RssModel::new(cfg);
    let th = model.thresholds(cfg);
    if !(th.unlock_dbm > th.lock_dbm) {
        return Err(HarnessError::Config(format!(
            "unlock threshold {:.2} dBm must exceed lock threshold {:.2} dBm",
            th.unlock_dbm, th.lock_dbm
        )));
    }
    let r = &cfg.rss;
    let steps = ((r.max_distance_m - r.min_distance_m) / r.step_m).floor() as usize;
    let grid: Vec<f64> = (0..=steps).map(|k| r.min_distance_m + k as f64 * r.step_m).collect();

    let mut result = ScenarioResult::new(cfg.clone());
    result.stats.insert("threshold.unlock_dbm".into(), th.unlock_dbm);
    result.stats.insert("threshold.lock_dbm".into(), th.lock_dbm);
    result.stats.insert("threshold.engine_dbm".into(), th.engine_dbm);

    for preset in &r.presets {
        let loss = preset.loss_db;
        let arms: [(&str, RssCurve<'_>); 2] = [
            ("direct", Box::new(move |d| model.direct_dbm(d, loss))),
            ("relay", Box::new(move |x| model.relayed_dbm(x, loss))),
        ];
        for (arm, rss) in &arms {
            let key = format!("{}.{arm}", preset.name);
            for (name, thr) in [("unlock", th.unlock_dbm), ("lock", th.lock_dbm), ("engine", th.engine_dbm)] {
                let b = boundary(rss, thr, r.min_distance_m, r.max_distance_m).unwrap_or(0.0);
                result.stats.insert(format!("boundary_m.{name}.{key}"), b);
            }

            let mut car = AccessController::new(th);
            let approach = grid.iter().rev().map(|&d| ("approach", d));
            let depart = grid.iter().map(|&d| ("depart", d));
            let mut walk_unlock = 0.0;
            let mut walk_lock = 0.0;
            for (rep, (leg, d)) in approach.chain(depart).enumerate() {
                let p = rss(d);
                let before = car.state();
                let decision = car.observe(p);
                if before != car.state() {
                    match leg {
                        "approach" if walk_unlock == 0.0 => walk_unlock = d,
                        "depart" if walk_lock == 0.0 => walk_lock = d,
                        _ => {}
                    }
                }
                result.rows.push(Row {
                    scenario_id: format!("{}/{}/{arm}/{leg}", cfg.id, preset.name),
                    rep,
                    d_true_m: Some(d),
                    rss_dbm: Some(p),
                    decision: Some(decision.as_str().to_string()),
                    seed: cfg.seed,
                    ..Row::default()
                });
            }
            result.stats.insert(format!("walk_m.unlock.{key}"), walk_unlock);
            result.stats.insert(format!("walk_m.lock.{key}"), walk_lock);
        }
    }
    Ok(result)
}

/// Detector and switch trace of one procedure, with the fate of every
/// transmission.
pub fn run_tdd_trace(cfg: &ScenarioConfig) -> Result<ScenarioResult, HarnessError> {
    let bench = Bench::new(cfg.clone())?;
    let geom = cfg.geometry;
    let path = bench.relay_path(&geom, cfg.relay.mode, cfg.relay.equalize, Some(cfg.program.d_set_m))?;
    let (timeline, events, roles) = bench.timeline(&path, 0)?;

    let mut result = ScenarioResult::new(cfg.clone());
    let mut worst_tone_clip: f64 = 0.0;
    let mut lost = 0usize;
    for (i, ((ev, role), fate)) in events.iter().zip(&roles).zip(&timeline.fates).enumerate() {
        let role_name = match role {
            Role::Background => "background",
            Role::Pattern => "pattern",
            Role::Reply => "reply",
            Role::ToneA(_) => "tone-a",
            Role::ToneB(_) => "tone-b",
            Role::Fake => "fake",
            Role::Interferer => "interferer",
        };
        let decision = match fate {
            EventFate::Clipped { lost_fraction } | EventFate::Lost { lost_fraction } => {
                format!("{}:{lost_fraction:.6}", fate.label())
            }
            _ => fate.label().to_string(),
        };
        if matches!(role, Role::ToneA(_) | Role::ToneB(_)) {
            match fate {
                EventFate::Clipped { lost_fraction } => worst_tone_clip = worst_tone_clip.max(*lost_fraction),
                EventFate::Lost { .. } | EventFate::Ignored => lost += 1,
                EventFate::Forwarded => {}
            }
        }
        result.rows.push(Row {
            scenario_id: format!("{}/{role_name}", cfg.id),
            rep: i,
            rss_dbm: Some(ev.power_dbm),
            decision: Some(decision),
            seed: cfg.seed,
            ..Row::default()
        });
    }
    result.stats.insert("events".into(), events.len() as f64);
    result.stats.insert("tones.max_clipped_fraction".into(), worst_tone_clip);
    result.stats.insert("tones.lost".into(), lost as f64);
    if let Ok(lock) = detect_sweep_start(&timeline.trace, &cfg.tdd.pattern()) {
        result.stats.insert("lock.start_us".into(), lock.start_us);
        result.stats.insert("lock.end_us".into(), lock.end_us);
        result.stats.insert("tones.counted".into(), count_tones(&timeline.trace, &lock) as f64);
    }
    result.trace = Some(timeline.trace);
    Ok(result)
}
