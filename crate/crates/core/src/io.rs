//! File formats and configuration: the trajectory CSV schema, trial-log
//! persistence, the moving-average filter for offline datasets, and the
//! flat key=value experiment config.
//!
//! Float columns are written with Rust's shortest round-trip formatting,
//! so save/load is lossless and repeated runs with one (config, seed)
//! produce byte-identical CSVs. Wall-clock timing fields deliberately
//! never enter a CSV; they go to run logs and timing text reports, which
//! are the only run-varying outputs.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mpc::StateWeight;
use crate::online::{Estimator, TrialLog};
use crate::plant::FingerLayout;
use crate::types::{ControlInput, GripperState, STATE_DIM};

/// Exact header of a trajectory CSV.
pub const TRAJECTORY_HEADER: &str = "t,x1,y1,z1,x2,y2,z2,x3,y3,z3,u1,u2";

/// One trajectory record: time in seconds, tip positions, duty cycles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub t: f64,
    pub state: GripperState,
    pub input: ControlInput,
}

/// Renders trajectory records to the canonical CSV text.
pub fn trajectory_to_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = write!(out, "{}", r.t);
        for c in r.state.as_slice() {
            let _ = write!(out, ",{c}");
        }
        for u in r.input.as_slice() {
            let _ = write!(out, ",{u}");
        }
        out.push('\n');
    }
    out
}

pub fn save_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(records))?;
    Ok(())
}

/// Parses and validates a trajectory CSV: exact header, complete finite
/// cells, strictly increasing time.
pub fn load_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_trajectory(&text, &path.display().to_string())
}

pub fn parse_trajectory(text: &str, origin: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Schema {
        path: origin.to_string(),
        message: "empty file".into(),
    })?;
    if header.trim_end() != TRAJECTORY_HEADER {
        return Err(Error::Schema {
            path: origin.to_string(),
            message: format!("expected header {TRAJECTORY_HEADER:?}, got {header:?}"),
        });
    }
    let mut records: Vec<TrajectoryRecord> = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 12 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: lineno,
                message: format!("expected 12 cells, found {}", cells.len()),
            });
        }
        let mut values = [0.0f64; 12];
        for (k, cell) in cells.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                path: origin.to_string(),
                line: lineno,
                message: format!("unparseable value {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    message: format!("non-finite value {cell:?}"),
                });
            }
            values[k] = v;
        }
        let record = TrajectoryRecord {
            t: values[0],
            state: GripperState::new(values[1..10].try_into().expect("nine state cells")),
            input: ControlInput::new(values[10], values[11]),
        };
        if let Some(prev) = records.last() {
            if record.t <= prev.t {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: lineno,
                    message: format!("time {} does not increase past {}", record.t, prev.t),
                });
            }
        }
        records.push(record);
    }
    Ok(records)
}

/// Centered moving average with the window shrinking symmetrically at the
/// boundaries; output length equals input length.
pub fn moving_average(signal: &[GripperState], window: usize) -> Vec<GripperState> {
    assert!(window >= 1, "window must be positive");
    let n = signal.len();
    let half = (window - 1) / 2;
    (0..n)
        .map(|i| {
            let h = half.min(i).min(n - 1 - i);
            let mut acc = [0.0f64; STATE_DIM];
            for s in &signal[i - h..=i + h] {
                for (a, v) in acc.iter_mut().zip(s.as_slice()) {
                    *a += v;
                }
            }
            let count = (2 * h + 1) as f64;
            GripperState::new(acc.map(|a| a / count))
        })
        .collect()
}

/// Columns of a persisted trial log. Predictions are `nan` on rows made
/// before the first model exists; every other cell is finite.
pub const TRIAL_LOG_HEADER: &str = "step,t,phase,x1,y1,z1,x2,y2,z2,x3,y3,z3,u1,u2,\
rx1,ry1,rz1,rx2,ry2,rz2,rx3,ry3,rz3,px1,py1,pz1,px2,py2,pz2,px3,py3,pz3,fn1,fn2,fn3";

/// Renders a trial log to CSV. Wall-clock columns are intentionally
/// absent; see the module docs.
pub fn trial_log_to_csv(log: &TrialLog) -> String {
    let mut out = String::new();
    out.push_str(TRIAL_LOG_HEADER);
    out.push('\n');
    for r in &log.rows {
        let _ = write!(out, "{},{},{}", r.step, r.time, r.phase.name());
        for c in r.state.as_slice() {
            let _ = write!(out, ",{c}");
        }
        for u in r.input.as_slice() {
            let _ = write!(out, ",{u}");
        }
        for c in r.reference.as_slice() {
            let _ = write!(out, ",{c}");
        }
        match &r.prediction {
            Some(p) => {
                for c in p.as_slice() {
                    let _ = write!(out, ",{c}");
                }
            }
            None => out.push_str(&",nan".repeat(STATE_DIM)),
        }
        for f in r.contact_forces {
            let _ = write!(out, ",{f}");
        }
        out.push('\n');
    }
    out
}

pub fn save_trial_log(path: &Path, log: &TrialLog) -> Result<()> {
    std::fs::write(path, trial_log_to_csv(log))?;
    Ok(())
}

/// One parsed row of a persisted trial log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCsvRow {
    pub step: usize,
    pub time: f64,
    pub phase: String,
    pub state: GripperState,
    pub input: ControlInput,
    pub reference: GripperState,
    /// Absent on rows written before the first model existed.
    pub prediction: Option<GripperState>,
    pub contact_forces: [f64; 3],
}

/// Reads back a trial-log CSV; `nan` prediction cells become `None`.
pub fn load_trial_csv(path: &Path) -> Result<Vec<TrialCsvRow>> {
    let text = std::fs::read_to_string(path)?;
    let origin = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Schema {
        path: origin.clone(),
        message: "empty file".into(),
    })?;
    if header.trim_end() != TRIAL_LOG_HEADER {
        return Err(Error::Schema {
            path: origin,
            message: "unrecognized trial log header".into(),
        });
    }
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 + 9 + 2 + 9 + 9 + 3 {
            return Err(Error::Parse {
                path: origin.clone(),
                line: lineno,
                message: format!("expected 35 cells, found {}", cells.len()),
            });
        }
        let parse_f = |cell: &str| -> Result<f64> {
            cell.trim().parse().map_err(|_| Error::Parse {
                path: origin.clone(),
                line: lineno,
                message: format!("unparseable value {cell:?}"),
            })
        };
        let step: usize = cells[0].trim().parse().map_err(|_| Error::Parse {
            path: origin.clone(),
            line: lineno,
            message: format!("unparseable step {:?}", cells[0]),
        })?;
        let time = parse_f(cells[1])?;
        let phase = cells[2].trim().to_string();
        let mut state = [0.0; STATE_DIM];
        for (k, slot) in state.iter_mut().enumerate() {
            *slot = parse_f(cells[3 + k])?;
        }
        let input = ControlInput::new(parse_f(cells[12])?, parse_f(cells[13])?);
        let mut reference = [0.0; STATE_DIM];
        for (k, slot) in reference.iter_mut().enumerate() {
            *slot = parse_f(cells[14 + k])?;
        }
        let mut pred = [0.0; STATE_DIM];
        let mut pred_nan = false;
        for (k, slot) in pred.iter_mut().enumerate() {
            let v = parse_f(cells[23 + k])?;
            if v.is_nan() {
                pred_nan = true;
            }
            *slot = v;
        }
        let mut forces = [0.0; 3];
        for (k, slot) in forces.iter_mut().enumerate() {
            *slot = parse_f(cells[32 + k])?;
        }
        rows.push(TrialCsvRow {
            step,
            time,
            phase,
            state: GripperState::new(state),
            input,
            reference: GripperState::new(reference),
            prediction: (!pred_nan).then(|| GripperState::new(pred)),
            contact_forces: forces,
        });
    }
    Ok(rows)
}

/// Experiment configuration: every key of the flat key=value file, with
/// documented defaults. Unknown or duplicate keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dictionary: String,
    pub svd_tol: f64,
    pub n_t: usize,
    pub m_init: usize,
    pub t_steps: usize,
    pub h_p: usize,
    pub grid_levels: usize,
    pub q: StateWeight,
    pub r: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub layout: FingerLayout,
    pub object: u8,
    pub seed: u64,
    pub estimator: Estimator,
    pub lambda: f64,
    pub lasso_max_iter: usize,
    pub lasso_tol: f64,
    pub hold_tol: f64,
    pub lift_ramp_steps: usize,
    pub hold_steps: usize,
    pub ramp_steps: usize,
    pub plate_radius: f64,
    pub finger_length: f64,
    pub pressure_tau: f64,
    pub pwm_gain: f64,
    pub pressure_torque: f64,
    pub stiffness_linear: f64,
    pub stiffness_cubic: f64,
    pub bend_rate: f64,
    pub bend_limit: f64,
    pub contact_arm: f64,
    pub noise_std: f64,
    pub input_noise_std: f64,
    pub trial_variability: f64,
    pub drift_rate: f64,
    pub dt: f64,
    pub object_height: f64,
    pub bench_reps: usize,
    pub campaign_reps: usize,
    pub filter_window: usize,
    pub offline_segments: usize,
    pub offline_session_age: f64,
    pub segment_seconds: f64,
    pub timing_sequential: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let plant = crate::plant::PlantParams::default();
        let loopc = crate::online::OnlineLoopConfig::default();
        Self {
            dictionary: "gripper".into(),
            svd_tol: loopc.svd_tol,
            n_t: loopc.window,
            m_init: loopc.init_steps,
            t_steps: loopc.total_steps,
            h_p: loopc.mpc.horizon,
            grid_levels: loopc.mpc.grid_levels,
            q: loopc.mpc.state_weight.clone(),
            r: loopc.mpc.input_weight,
            u_min: loopc.mpc.u_min,
            u_max: loopc.mpc.u_max,
            layout: plant.layout,
            object: 1,
            seed: 1,
            estimator: loopc.estimator,
            lambda: loopc.lambda,
            lasso_max_iter: loopc.lasso_max_iter,
            lasso_tol: loopc.lasso_tol,
            hold_tol: loopc.hold_tol,
            lift_ramp_steps: loopc.lift_ramp_steps,
            hold_steps: loopc.hold_steps,
            ramp_steps: 22,
            plate_radius: plant.plate_radius,
            finger_length: plant.finger_length,
            pressure_tau: plant.pressure_tau,
            pwm_gain: plant.pwm_gain,
            pressure_torque: plant.pressure_torque,
            stiffness_linear: plant.stiffness_linear,
            stiffness_cubic: plant.stiffness_cubic,
            bend_rate: plant.bend_rate,
            bend_limit: plant.bend_limit,
            contact_arm: plant.contact_arm,
            noise_std: plant.noise_std,
            input_noise_std: loopc.input_noise_std,
            trial_variability: plant.trial_variability,
            drift_rate: plant.drift_rate,
            dt: plant.dt,
            object_height: plant.object_height,
            bench_reps: 8,
            campaign_reps: 10,
            filter_window: 5,
            offline_segments: 32,
            offline_session_age: 0.12,
            segment_seconds: 16.0,
            timing_sequential: true,
        }
    }
}

fn config_err(key: &str, message: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        message: message.into(),
    }
}

macro_rules! parse_into {
    ($key:expr, $value:expr, $slot:expr) => {
        $slot = $value
            .parse()
            .map_err(|_| config_err($key, format!("unparseable value {:?}", $value)))?
    };
}

impl ExperimentConfig {
    /// Applies one key=value override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "dictionary" => {
                if value != "gripper" {
                    return Err(config_err(key, format!("unsupported dictionary {value:?}")));
                }
                self.dictionary = value.to_string();
            }
            "svd_tol" => parse_into!(key, value, self.svd_tol),
            "N_T" => parse_into!(key, value, self.n_t),
            "M" => parse_into!(key, value, self.m_init),
            "T" => parse_into!(key, value, self.t_steps),
            "H_p" => parse_into!(key, value, self.h_p),
            "grid_levels" => parse_into!(key, value, self.grid_levels),
            "Q" => {
                self.q = parse_state_weight(value).ok_or_else(|| {
                    config_err(key, format!("expected a scalar or 9 comma values, got {value:?}"))
                })?;
            }
            "R" => parse_into!(key, value, self.r),
            "u_min" => parse_into!(key, value, self.u_min),
            "u_max" => parse_into!(key, value, self.u_max),
            "layout" => {
                self.layout = FingerLayout::parse(value)
                    .ok_or_else(|| config_err(key, format!("unknown layout {value:?}")))?;
            }
            "object" => {
                parse_into!(key, value, self.object);
                if !(1..=6).contains(&self.object) {
                    return Err(config_err(key, "object id must be in 1..=6"));
                }
            }
            "seed" => parse_into!(key, value, self.seed),
            "estimator" => self.estimator = Estimator::parse(value)?,
            "lambda" => parse_into!(key, value, self.lambda),
            "lasso_max_iter" => parse_into!(key, value, self.lasso_max_iter),
            "lasso_tol" => parse_into!(key, value, self.lasso_tol),
            "hold_tol" => parse_into!(key, value, self.hold_tol),
            "lift_ramp_steps" => parse_into!(key, value, self.lift_ramp_steps),
            "hold_steps" => parse_into!(key, value, self.hold_steps),
            "ramp_steps" => parse_into!(key, value, self.ramp_steps),
            "plate_radius" => parse_into!(key, value, self.plate_radius),
            "finger_length" => parse_into!(key, value, self.finger_length),
            "pressure_tau" => parse_into!(key, value, self.pressure_tau),
            "pwm_gain" => parse_into!(key, value, self.pwm_gain),
            "pressure_torque" => parse_into!(key, value, self.pressure_torque),
            "stiffness_linear" => parse_into!(key, value, self.stiffness_linear),
            "stiffness_cubic" => parse_into!(key, value, self.stiffness_cubic),
            "bend_rate" => parse_into!(key, value, self.bend_rate),
            "bend_limit" => parse_into!(key, value, self.bend_limit),
            "contact_arm" => parse_into!(key, value, self.contact_arm),
            "noise_std" => parse_into!(key, value, self.noise_std),
            "input_noise_std" => parse_into!(key, value, self.input_noise_std),
            "trial_variability" => parse_into!(key, value, self.trial_variability),
            "drift_rate" => parse_into!(key, value, self.drift_rate),
            "dt" => parse_into!(key, value, self.dt),
            "object_height" => parse_into!(key, value, self.object_height),
            "bench_reps" => parse_into!(key, value, self.bench_reps),
            "campaign_reps" => parse_into!(key, value, self.campaign_reps),
            "filter_window" => parse_into!(key, value, self.filter_window),
            "offline_segments" => parse_into!(key, value, self.offline_segments),
            "offline_session_age" => parse_into!(key, value, self.offline_session_age),
            "segment_seconds" => parse_into!(key, value, self.segment_seconds),
            "timing_sequential" => parse_into!(key, value, self.timing_sequential),
            other => return Err(config_err(other, "unknown key")),
        }
        Ok(())
    }

    /// Every resolved key=value, one line per key, for the run log.
    pub fn echo_lines(&self) -> Vec<String> {
        let q = match &self.q {
            StateWeight::Uniform(v) => format!("{v}"),
            StateWeight::PerCoord(v) => v.map(|x| x.to_string()).join(","),
        };
        vec![
            format!("dictionary={}", self.dictionary),
            format!("svd_tol={}", self.svd_tol),
            format!("N_T={}", self.n_t),
            format!("M={}", self.m_init),
            format!("T={}", self.t_steps),
            format!("H_p={}", self.h_p),
            format!("grid_levels={}", self.grid_levels),
            format!("Q={q}"),
            format!("R={}", self.r),
            format!("u_min={}", self.u_min),
            format!("u_max={}", self.u_max),
            format!("layout={}", self.layout.name()),
            format!("object={}", self.object),
            format!("seed={}", self.seed),
            format!("estimator={}", self.estimator.name()),
            format!("lambda={}", self.lambda),
            format!("lasso_max_iter={}", self.lasso_max_iter),
            format!("lasso_tol={}", self.lasso_tol),
            format!("hold_tol={}", self.hold_tol),
            format!("lift_ramp_steps={}", self.lift_ramp_steps),
            format!("hold_steps={}", self.hold_steps),
            format!("ramp_steps={}", self.ramp_steps),
            format!("plate_radius={}", self.plate_radius),
            format!("finger_length={}", self.finger_length),
            format!("pressure_tau={}", self.pressure_tau),
            format!("pwm_gain={}", self.pwm_gain),
            format!("pressure_torque={}", self.pressure_torque),
            format!("stiffness_linear={}", self.stiffness_linear),
            format!("stiffness_cubic={}", self.stiffness_cubic),
            format!("bend_rate={}", self.bend_rate),
            format!("bend_limit={}", self.bend_limit),
            format!("contact_arm={}", self.contact_arm),
            format!("noise_std={}", self.noise_std),
            format!("input_noise_std={}", self.input_noise_std),
            format!("trial_variability={}", self.trial_variability),
            format!("drift_rate={}", self.drift_rate),
            format!("dt={}", self.dt),
            format!("object_height={}", self.object_height),
            format!("bench_reps={}", self.bench_reps),
            format!("campaign_reps={}", self.campaign_reps),
            format!("filter_window={}", self.filter_window),
            format!("offline_segments={}", self.offline_segments),
            format!("offline_session_age={}", self.offline_session_age),
            format!("segment_seconds={}", self.segment_seconds),
            format!("timing_sequential={}", self.timing_sequential),
        ]
    }

    /// Cross-field validation, run after all overrides are applied.
    pub fn validate(&self) -> Result<()> {
        self.plant_params().validate()?;
        self.online_config().validate()?;
        if self.filter_window < 1 {
            return Err(config_err("filter_window", "window must be at least 1"));
        }
        if self.bench_reps < 1 || self.campaign_reps < 1 {
            return Err(config_err("bench_reps", "repetition counts must be positive"));
        }
        if self.offline_segments < 1 || !(self.segment_seconds > 0.0) {
            return Err(config_err(
                "offline_segments",
                "offline collection needs at least one positive-length segment",
            ));
        }
        Ok(())
    }

    pub fn plant_params(&self) -> crate::plant::PlantParams {
        crate::plant::PlantParams {
            layout: self.layout,
            plate_radius: self.plate_radius,
            finger_length: self.finger_length,
            pressure_tau: self.pressure_tau,
            pwm_gain: self.pwm_gain,
            pressure_torque: self.pressure_torque,
            stiffness_linear: self.stiffness_linear,
            stiffness_cubic: self.stiffness_cubic,
            bend_rate: self.bend_rate,
            bend_limit: self.bend_limit,
            contact_arm: self.contact_arm,
            noise_std: self.noise_std,
            trial_variability: self.trial_variability,
            drift_rate: self.drift_rate,
            dt: self.dt,
            object_height: self.object_height,
        }
    }

    pub fn mpc_config(&self) -> crate::mpc::MpcConfig {
        crate::mpc::MpcConfig {
            horizon: self.h_p,
            u_min: self.u_min,
            u_max: self.u_max,
            grid_levels: self.grid_levels,
            state_weight: self.q.clone(),
            input_weight: self.r,
        }
    }

    pub fn online_config(&self) -> crate::online::OnlineLoopConfig {
        crate::online::OnlineLoopConfig {
            init_steps: self.m_init,
            window: self.n_t,
            total_steps: self.t_steps,
            dict: crate::dictionary::Dictionary::gripper(),
            mpc: self.mpc_config(),
            svd_tol: self.svd_tol,
            estimator: self.estimator,
            lambda: self.lambda,
            lasso_max_iter: self.lasso_max_iter,
            lasso_tol: self.lasso_tol,
            input_noise_std: self.input_noise_std,
            hold_tol: self.hold_tol,
            lift_ramp_steps: self.lift_ramp_steps,
            hold_steps: self.hold_steps,
        }
    }

    pub fn object_spec(&self) -> crate::plant::ObjectSpec {
        crate::plant::ObjectSpec::by_id(self.object).expect("validated object id")
    }
}

fn parse_state_weight(value: &str) -> Option<StateWeight> {
    if let Ok(v) = value.parse::<f64>() {
        return Some(StateWeight::Uniform(v));
    }
    let parts: Vec<&str> = value.split(',').collect();
    if parts.len() != STATE_DIM {
        return None;
    }
    let mut out = [0.0; STATE_DIM];
    for (slot, part) in out.iter_mut().zip(parts) {
        *slot = part.trim().parse().ok()?;
    }
    Some(StateWeight::PerCoord(out))
}

/// Parses config text: defaults merged with `key=value` overrides, one
/// per line; `#` starts a comment. Duplicate keys are rejected so a file
/// never silently contradicts itself.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::default();
    let mut seen: Vec<String> = Vec::new();
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Config {
            key: line.to_string(),
            message: "expected key=value".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if seen.iter().any(|k| k == key) {
            return Err(config_err(key, "duplicate key"));
        }
        seen.push(key.to_string());
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Loads and validates an experiment config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}
