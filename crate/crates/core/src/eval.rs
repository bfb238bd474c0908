//! Benchmark harnesses: per-finger MSE, the sliding-window prediction
//! protocol over offline and online datasets, per-step fit-time
//! statistics, and the grasp campaign.
//!
//! Dataset conventions: the "unloaded offline" set is 32 constant-input
//! free-motion segments (16 s at 2 Hz, duty cycles on an 8x4 grid over
//! the actuation band); the "loaded offline" set is eight controlled
//! grasp trials of 26 points (four on object 1, two each on objects 2
//! and 3); the "online" set is the evaluation grasp trial itself, with
//! models refit on a sliding window of the last N_T transitions at every
//! step. Offline states pass through the moving-average filter before
//! training; nothing is filtered online.
//!
//! Index convention: a window of N_T transitions ending at state t-1
//! predicts state t, so the first causal prediction target is index
//! N_T + 1 and [`mse_per_finger`] averages targets t in [N_T+1, L-1].
//! Per-finger entries follow the per-coordinate (x, y, z) reading.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::io::ExperimentConfig;
use crate::koopman;
use crate::online::{self, Estimator, TrialLog};
use crate::plant::{self, FingerLayout, ObjectSpec};
use crate::sindy;
use crate::types::{ControlInput, GripperState, RngSeed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    OfflineUnloaded,
    OfflineLoaded,
    Online,
}

impl DatasetKind {
    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::OfflineUnloaded => "offline_unloaded",
            DatasetKind::OfflineLoaded => "offline_loaded",
            DatasetKind::Online => "online",
        }
    }
}

pub const ALL_DATASETS: [DatasetKind; 3] = [
    DatasetKind::OfflineUnloaded,
    DatasetKind::OfflineLoaded,
    DatasetKind::Online,
];
pub const ALL_METHODS: [Estimator; 2] = [Estimator::AcdEdmd, Estimator::Sindy];
pub const DEFAULT_SIZES: [usize; 3] = [3, 5, 10];

/// Wall-clock statistics over per-step fits, first fit of each trial
/// discarded as warm-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitStats {
    pub mean: f64,
    pub sigma: f64,
    pub median: f64,
    pub count: usize,
}

impl FitStats {
    fn from_samples(mut samples: Vec<f64>) -> FitStats {
        if samples.is_empty() {
            return FitStats {
                mean: 0.0,
                sigma: 0.0,
                median: 0.0,
                count: 0,
            };
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            0.5 * (samples[n / 2 - 1] + samples[n / 2])
        };
        FitStats {
            mean,
            sigma: var.sqrt(),
            median,
            count: n,
        }
    }
}

/// One (method, dataset, N_T) cell of the prediction benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionCell {
    pub method: Estimator,
    pub dataset: DatasetKind,
    pub n_t: usize,
    /// Mean per-finger per-coordinate MSE over the repetitions.
    pub mse: [[f64; 3]; 3],
    /// Power-of-ten exponent of the largest MSE entry.
    pub magnitude: i32,
    pub fit_stats: FitStats,
    /// True when the cell's dataset could not be produced.
    pub missing: bool,
}

impl PredictionCell {
    /// Per-finger scalar MSE: mean of the finger's three coordinates.
    pub fn finger_mse(&self, finger: usize) -> f64 {
        self.mse[finger].iter().sum::<f64>() / 3.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionReport {
    pub cells: Vec<PredictionCell>,
    pub repetitions: usize,
}

/// Componentwise per-finger MSE over the causal prediction targets
/// t in [n_t+1, L-1]; sequences must be aligned and equally long.
pub fn mse_per_finger(
    predicted: &[GripperState],
    truth: &[GripperState],
    n_t: usize,
) -> Result<[[f64; 3]; 3]> {
    if predicted.len() != truth.len() {
        return Err(Error::InsufficientData(format!(
            "prediction/truth length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    let l = truth.len();
    if l <= n_t + 1 {
        return Err(Error::InsufficientData(format!(
            "need more than N_T+1 = {} points, got {l}",
            n_t + 1
        )));
    }
    let count = (l - n_t - 1) as f64;
    let mut acc = [[0.0f64; 3]; 3];
    for t in n_t + 1..l {
        let p = predicted[t].as_slice();
        let x = truth[t].as_slice();
        for finger in 0..3 {
            for coord in 0..3 {
                let d = p[3 * finger + coord] - x[3 * finger + coord];
                acc[finger][coord] += d * d;
            }
        }
    }
    for row in &mut acc {
        for v in row.iter_mut() {
            *v /= count;
        }
    }
    Ok(acc)
}

/// Trajectory segments as (states, inputs) pairs with one more state than
/// inputs.
pub type Segment = (Vec<GripperState>, Vec<ControlInput>);

/// Constant-input free-motion segments spanning the actuation band on an
/// 8x4 duty grid, states moving-average filtered. The whole collection
/// happens in one session on one plant draw; trials evaluated later run
/// on their own draws, which is exactly what ages an offline model.
pub fn generate_offline_unloaded(cfg: &ExperimentConfig, seed: RngSeed) -> Vec<Segment> {
    let params = cfg.plant_params();
    let session_params = params.aged(cfg.offline_session_age, &mut seed.derive(1000).stream(3));
    let samples = (cfg.segment_seconds / params.dt).round() as usize;
    let span = cfg.u_max - cfg.u_min;
    (0..cfg.offline_segments)
        .map(|s| {
            let i = s % 8;
            let j = (s / 8) % 4;
            let u = ControlInput::new(
                cfg.u_min + span * i as f64 / 7.0,
                cfg.u_min + span * j as f64 / 3.0,
            );
            let seg_seed = seed.derive(1000 + s as u64);
            let rng = (params.noise_std > 0.0 || params.drift_rate > 0.0).then(|| seg_seed.stream(2));
            let mut plant =
                plant::GripperPlant::pressurized(session_params.clone(), None, rng, cfg.u_min);
            let mut states = vec![plant.observe()];
            let mut inputs = Vec::with_capacity(samples - 1);
            for _ in 0..samples.saturating_sub(1) {
                plant.apply(&u);
                states.push(plant.observe());
                inputs.push(u);
            }
            let filtered = crate::io::moving_average(&states, cfg.filter_window);
            (filtered, inputs)
        })
        .collect()
}

/// Controlled grasp trials for the loaded set: four on object 1, two each
/// on objects 2 and 3, truncated to 26 points and filtered.
pub fn generate_offline_loaded(cfg: &ExperimentConfig, seed: RngSeed) -> Result<Vec<Segment>> {
    const LOADED_OBJECTS: [u8; 8] = [1, 1, 1, 1, 2, 2, 3, 3];
    const LOADED_POINTS: usize = 26;
    let params = cfg.plant_params();
    // one collection session, one plant draw for all eight trials
    let mut session_params = params.aged(cfg.offline_session_age, &mut seed.derive(2000).stream(3));
    session_params.trial_variability = 0.0;
    let mut loop_cfg = cfg.online_config();
    loop_cfg.total_steps = LOADED_POINTS;
    loop_cfg.hold_tol = 0.0;
    let reference = plant::closing_reference(
        &params,
        cfg.u_min,
        cfg.u_max,
        LOADED_POINTS,
        cfg.ramp_steps,
    );
    LOADED_OBJECTS
        .iter()
        .enumerate()
        .map(|(k, &obj_id)| {
            let object = ObjectSpec::by_id(obj_id).expect("ids 1..=3 exist");
            let log = online::run_online_trial(
                &session_params,
                Some(&object),
                &reference,
                &loop_cfg,
                seed.derive(2000 + k as u64),
            )?;
            let rows = log.control_rows();
            let states: Vec<GripperState> = rows.iter().map(|r| r.state).collect();
            let inputs: Vec<ControlInput> =
                rows.iter().take(states.len() - 1).map(|r| r.input).collect();
            let filtered = crate::io::moving_average(&states, cfg.filter_window);
            Ok((filtered, inputs))
        })
        .collect()
}

/// One evaluation grasp trial on object 1, full length (no early hold
/// termination so every repetition has the same horizon).
pub fn generate_online_trial(cfg: &ExperimentConfig, seed: RngSeed) -> Result<TrialLog> {
    let params = cfg.plant_params();
    let object = ObjectSpec::by_id(1).expect("object 1 exists");
    let mut loop_cfg = cfg.online_config();
    loop_cfg.hold_tol = 0.0;
    let reference = plant::closing_reference(
        &params,
        cfg.u_min,
        cfg.u_max,
        loop_cfg.total_steps,
        cfg.ramp_steps,
    );
    online::run_online_trial(&params, Some(&object), &reference, &loop_cfg, seed)
}

fn fit_method(
    method: Estimator,
    states: &[GripperState],
    inputs: &[ControlInput],
    cfg: &ExperimentConfig,
) -> Result<Box<dyn Fn(&GripperState, &ControlInput) -> GripperState>> {
    match method {
        Estimator::AcdEdmd => {
            let dict = crate::dictionary::Dictionary::gripper();
            let model = koopman::fit_edmd(states, inputs, &dict, cfg.svd_tol)?;
            Ok(Box::new(move |s, u| koopman::predict_one_step(&model, s, u)))
        }
        Estimator::Sindy => {
            let model = sindy::sindy_fit(
                states,
                inputs,
                cfg.lambda,
                cfg.lasso_max_iter,
                cfg.lasso_tol,
            )?;
            Ok(Box::new(move |s, u| sindy::sindy_predict(&model, s, u)))
        }
    }
}

fn fit_method_segments(
    method: Estimator,
    segments: &[Segment],
    cfg: &ExperimentConfig,
) -> Result<(Box<dyn Fn(&GripperState, &ControlInput) -> GripperState + Sync>, f64)> {
    match method {
        Estimator::AcdEdmd => {
            let dict = crate::dictionary::Dictionary::gripper();
            // warm-up fit discarded, then median-of-5 timing
            let _ = koopman::fit_edmd_segments(segments, &dict, cfg.svd_tol)?;
            let mut times = Vec::with_capacity(5);
            let mut model = None;
            for _ in 0..5 {
                let start = Instant::now();
                model = Some(koopman::fit_edmd_segments(segments, &dict, cfg.svd_tol)?);
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let model = model.expect("five fits ran");
            Ok((
                Box::new(move |s, u| koopman::predict_one_step(&model, s, u)),
                times[2],
            ))
        }
        Estimator::Sindy => {
            let fit = || {
                sindy::sindy_fit_segments(segments, cfg.lambda, cfg.lasso_max_iter, cfg.lasso_tol)
            };
            let _ = fit()?;
            let mut times = Vec::with_capacity(5);
            let mut model = None;
            for _ in 0..5 {
                let start = Instant::now();
                model = Some(fit()?);
                times.push(start.elapsed().as_secs_f64());
            }
            times.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            let model = model.expect("five fits ran");
            Ok((
                Box::new(move |s, u| sindy::sindy_predict(&model, s, u)),
                times[2],
            ))
        }
    }
}

/// Sliding-window one-step predictions over one trial: for each target
/// t >= n_t+1, refit on the n_t transitions ending at state t-1 and
/// predict from (state, input) at t-1. Returns predictions aligned with
/// `states` (head entries copy the truth and never enter the MSE) plus
/// the per-refit wall times.
pub fn sliding_window_predictions(
    method: Estimator,
    states: &[GripperState],
    inputs: &[ControlInput],
    n_t: usize,
    cfg: &ExperimentConfig,
) -> Result<(Vec<GripperState>, Vec<f64>)> {
    let l = states.len();
    if l <= n_t + 1 {
        return Err(Error::InsufficientData(format!(
            "trial of length {l} cannot host a window of {n_t}"
        )));
    }
    let mut predictions: Vec<GripperState> = states[..n_t + 1].to_vec();
    let mut times = Vec::with_capacity(l - n_t - 1);
    for t in n_t + 1..l {
        let lo = t - 1 - n_t;
        let window_states = &states[lo..t];
        let window_inputs = &inputs[lo..t - 1];
        let start = Instant::now();
        let predictor = fit_method(method, window_states, window_inputs, cfg)?;
        times.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
        predictions.push(predictor(&states[t - 1], &inputs[t - 1]));
    }
    Ok((predictions, times))
}

/// Fixed-model one-step predictions along a trial, aligned like
/// [`sliding_window_predictions`].
pub fn fixed_model_predictions(
    predictor: &(dyn Fn(&GripperState, &ControlInput) -> GripperState + Sync),
    states: &[GripperState],
    inputs: &[ControlInput],
    n_t: usize,
) -> Vec<GripperState> {
    let l = states.len();
    let mut predictions: Vec<GripperState> = states[..(n_t + 1).min(l)].to_vec();
    for t in n_t + 1..l {
        predictions.push(predictor(&states[t - 1], &inputs[t - 1]));
    }
    predictions
}

struct CellAccumulator {
    mse_sum: [[f64; 3]; 3],
    reps_used: usize,
    fit_times: Vec<f64>,
}

impl CellAccumulator {
    fn new() -> Self {
        Self {
            mse_sum: [[0.0; 3]; 3],
            reps_used: 0,
            fit_times: Vec::new(),
        }
    }

    fn add(&mut self, mse: [[f64; 3]; 3], times: &[f64]) {
        for f in 0..3 {
            for c in 0..3 {
                self.mse_sum[f][c] += mse[f][c];
            }
        }
        self.reps_used += 1;
        self.fit_times.extend_from_slice(times);
    }
}

fn magnitude_of(mse: &[[f64; 3]; 3]) -> i32 {
    let max = mse
        .iter()
        .flatten()
        .cloned()
        .fold(0.0f64, f64::max);
    if max > 0.0 {
        max.log10().floor() as i32
    } else {
        0
    }
}

/// Runs the full prediction benchmark: every requested (dataset, method,
/// N_T) cell evaluated on `repetitions` seeded online trials, offline
/// models trained once per cell on the shared offline datasets.
pub fn benchmark_predictors(
    datasets: &[DatasetKind],
    methods: &[Estimator],
    sizes: &[usize],
    cfg: &ExperimentConfig,
    seed: RngSeed,
    repetitions: usize,
) -> Result<PredictionReport> {
    let unloaded = if datasets.contains(&DatasetKind::OfflineUnloaded) {
        Some(generate_offline_unloaded(cfg, seed))
    } else {
        None
    };
    let loaded = if datasets.contains(&DatasetKind::OfflineLoaded) {
        generate_offline_loaded(cfg, seed).ok()
    } else {
        None
    };

    // evaluation trials: states and applied inputs of the modeling rows
    let mut trials: Vec<(Vec<GripperState>, Vec<ControlInput>)> = Vec::new();
    for rep in 0..repetitions {
        let log = generate_online_trial(cfg, seed.derive(3000 + rep as u64))?;
        let rows = log.control_rows();
        let states: Vec<GripperState> = rows.iter().map(|r| r.state).collect();
        let inputs: Vec<ControlInput> = rows.iter().map(|r| r.input).collect();
        trials.push((states, inputs));
    }

    let mut cells = Vec::new();
    for &dataset in datasets {
        for &method in methods {
            for &n_t in sizes {
                let mut acc = CellAccumulator::new();
                let missing;
                match dataset {
                    DatasetKind::Online => {
                        for (states, inputs) in &trials {
                            let Ok((preds, mut times)) =
                                sliding_window_predictions(method, states, inputs, n_t, cfg)
                            else {
                                continue;
                            };
                            let mse = mse_per_finger(&preds, states, n_t)?;
                            if !times.is_empty() {
                                times.remove(0); // warm-up
                            }
                            acc.add(mse, &times);
                        }
                        missing = acc.reps_used == 0;
                    }
                    DatasetKind::OfflineUnloaded | DatasetKind::OfflineLoaded => {
                        let segments = match dataset {
                            DatasetKind::OfflineUnloaded => unloaded.as_ref(),
                            _ => loaded.as_ref(),
                        };
                        match segments {
                            None => missing = true,
                            Some(segments) => {
                                let (predictor, fit_time) =
                                    fit_method_segments(method, segments, cfg)?;
                                for (states, inputs) in &trials {
                                    let preds =
                                        fixed_model_predictions(&*predictor, states, inputs, n_t);
                                    let mse = mse_per_finger(&preds, states, n_t)?;
                                    acc.add(mse, &[]);
                                }
                                acc.fit_times.push(fit_time);
                                missing = acc.reps_used == 0;
                            }
                        }
                    }
                }
                let reps = acc.reps_used.max(1) as f64;
                let mse = acc.mse_sum.map(|row| row.map(|v| v / reps));
                cells.push(PredictionCell {
                    method,
                    dataset,
                    n_t,
                    magnitude: magnitude_of(&mse),
                    mse,
                    fit_stats: FitStats::from_samples(acc.fit_times),
                    missing,
                });
            }
        }
    }
    Ok(PredictionReport {
        cells,
        repetitions,
    })
}

impl PredictionReport {
    pub fn cell(&self, method: Estimator, dataset: DatasetKind, n_t: usize) -> Option<&PredictionCell> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.dataset == dataset && c.n_t == n_t)
    }

    /// Deterministic CSV: MSE values only, no wall-clock columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,dataset,N_T,missing,\
mse_f1_x,mse_f1_y,mse_f1_z,mse_f2_x,mse_f2_y,mse_f2_z,mse_f3_x,mse_f3_y,mse_f3_z,magnitude\n",
        );
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}",
                c.method.name(),
                c.dataset.name(),
                c.n_t,
                c.missing
            ));
            for finger in 0..3 {
                for coord in 0..3 {
                    out.push_str(&format!(",{}", c.mse[finger][coord]));
                }
            }
            out.push_str(&format!(",{}\n", c.magnitude));
        }
        out
    }

    /// Aligned text table of prediction accuracy (mantissas at the cell
    /// magnitude) plus the per-step training-time table.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "Prediction accuracy ({} repetitions; per-finger [x, y, z] MSE)\n",
            self.repetitions
        ));
        out.push_str(&format!(
            "{:<10} {:<17} {:>4}  {:<26} {:<26} {:<26} {:<10}\n",
            "method", "dataset", "N_T", "MSE(|xi_1|)", "MSE(|xi_2|)", "MSE(|xi_3|)", "magnitude"
        ));
        for c in &self.cells {
            if c.missing {
                out.push_str(&format!(
                    "{:<10} {:<17} {:>4}  absent\n",
                    c.method.name(),
                    c.dataset.name(),
                    c.n_t
                ));
                continue;
            }
            let scale = 10f64.powi(-c.magnitude);
            let fmt = |row: [f64; 3]| {
                format!(
                    "[{:.2}, {:.2}, {:.2}]",
                    row[0] * scale,
                    row[1] * scale,
                    row[2] * scale
                )
            };
            out.push_str(&format!(
                "{:<10} {:<17} {:>4}  {:<26} {:<26} {:<26} x10^{}\n",
                c.method.name(),
                c.dataset.name(),
                c.n_t,
                fmt(c.mse[0]),
                fmt(c.mse[1]),
                fmt(c.mse[2]),
                c.magnitude
            ));
        }
        out.push_str("\nTraining times per time step (seconds; wall clock, run-varying)\n");
        out.push_str(&format!(
            "{:<10} {:<17} {:>4}  {:>12} {:>12} {:>12} {:>8}\n",
            "method", "dataset", "N_T", "mean", "sigma", "median", "count"
        ));
        for c in &self.cells {
            let s = c.fit_stats;
            out.push_str(&format!(
                "{:<10} {:<17} {:>4}  {:>12.6} {:>12.6} {:>12.6} {:>8}\n",
                c.method.name(),
                c.dataset.name(),
                c.n_t,
                s.mean,
                s.sigma,
                s.median,
                s.count
            ));
        }
        out
    }
}

/// One campaign cell: grasp successes for a layout and object.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GraspCell {
    pub layout_symmetric: bool,
    pub object_id: u8,
    pub successes: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GraspReport {
    pub cells: Vec<GraspCell>,
    pub repetitions: usize,
}

fn campaign_trial(
    layout: FingerLayout,
    object_id: u8,
    rep: usize,
    cfg: &ExperimentConfig,
    seed: RngSeed,
) -> bool {
    let mut params = cfg.plant_params();
    params.layout = layout;
    let object = ObjectSpec::by_id(object_id).expect("campaign object ids are valid");
    let loop_cfg = {
        let mut c = cfg.online_config();
        c.mpc = cfg.mpc_config();
        c
    };
    let reference = plant::closing_reference(
        &params,
        cfg.u_min,
        cfg.u_max,
        loop_cfg.total_steps,
        cfg.ramp_steps,
    );
    let layout_salt = match layout {
        FingerLayout::Symmetric => 0u64,
        FingerLayout::Asymmetric => 1u64,
    };
    let trial_seed = seed.derive((layout_salt << 40) | ((object_id as u64) << 20) | rep as u64);
    match online::run_online_trial(&params, Some(&object), &reference, &loop_cfg, trial_seed) {
        Ok(log) => plant::grasp_outcome(&log, &object, &params),
        Err(_) => false,
    }
}

/// Runs `repetitions` seeded grasp trials per (layout, object) cell and
/// tabulates success counts. Trials are independent and fan out across
/// threads; the tally is identical either way.
pub fn grasp_campaign(
    layouts: &[FingerLayout],
    objects: &[u8],
    repetitions: usize,
    cfg: &ExperimentConfig,
    seed: RngSeed,
) -> Result<GraspReport> {
    let mut tasks = Vec::new();
    for &layout in layouts {
        for &object_id in objects {
            if ObjectSpec::by_id(object_id).is_none() {
                return Err(Error::Config {
                    key: "object".into(),
                    message: format!("unknown object id {object_id}"),
                });
            }
            for rep in 0..repetitions {
                tasks.push((layout, object_id, rep));
            }
        }
    }
    let outcomes = run_campaign_tasks(&tasks, cfg, seed);

    let mut cells = Vec::new();
    for &layout in layouts {
        for &object_id in objects {
            let successes = tasks
                .iter()
                .zip(outcomes.iter())
                .filter(|((l, o, _), ok)| *l == layout && *o == object_id && **ok)
                .count();
            cells.push(GraspCell {
                layout_symmetric: layout == FingerLayout::Symmetric,
                object_id,
                successes,
                trials: repetitions,
            });
        }
    }
    Ok(GraspReport {
        cells,
        repetitions,
    })
}

#[cfg(feature = "parallel")]
fn run_campaign_tasks(
    tasks: &[(FingerLayout, u8, usize)],
    cfg: &ExperimentConfig,
    seed: RngSeed,
) -> Vec<bool> {
    use rayon::prelude::*;
    tasks
        .par_iter()
        .map(|&(layout, object_id, rep)| campaign_trial(layout, object_id, rep, cfg, seed))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn run_campaign_tasks(
    tasks: &[(FingerLayout, u8, usize)],
    cfg: &ExperimentConfig,
    seed: RngSeed,
) -> Vec<bool> {
    tasks
        .iter()
        .map(|&(layout, object_id, rep)| campaign_trial(layout, object_id, rep, cfg, seed))
        .collect()
}

impl GraspReport {
    pub fn cell(&self, symmetric: bool, object_id: u8) -> Option<&GraspCell> {
        self.cells
            .iter()
            .find(|c| c.layout_symmetric == symmetric && c.object_id == object_id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("layout,object,successes,trials\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{}\n",
                if c.layout_symmetric { "symmetric" } else { "asymmetric" },
                c.object_id,
                c.successes,
                c.trials
            ));
        }
        out
    }

    /// Success-rate grid in the two-row layout of the result tables.
    pub fn to_text(&self) -> String {
        let mut objects: Vec<u8> = self.cells.iter().map(|c| c.object_id).collect();
        objects.sort_unstable();
        objects.dedup();
        let mut out = String::new();
        out.push_str(&format!(
            "Success rates of grasping different objects ({} repetitions per cell)\n",
            self.repetitions
        ));
        out.push_str(&format!("{:<22}", "Object"));
        for o in &objects {
            out.push_str(&format!("{:>8}", o));
        }
        out.push('\n');
        for symmetric in [true, false] {
            let name = if symmetric { "Symmetric Gripper" } else { "Asymmetric Gripper" };
            if !self.cells.iter().any(|c| c.layout_symmetric == symmetric) {
                continue;
            }
            out.push_str(&format!("{name:<22}"));
            for o in &objects {
                match self.cell(symmetric, *o) {
                    Some(c) => {
                        let pct = 100.0 * c.successes as f64 / c.trials.max(1) as f64;
                        out.push_str(&format!("{:>7.0}%", pct));
                    }
                    None => out.push_str(&format!("{:>8}", "-")),
                }
            }
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(v: f64) -> GripperState {
        GripperState::new([v; 9])
    }

    #[test]
    fn mse_zero_for_perfect_predictions() {
        let truth: Vec<GripperState> = (0..8).map(|k| state(k as f64)).collect();
        let mse = mse_per_finger(&truth, &truth, 3).unwrap();
        assert_eq!(mse, [[0.0; 3]; 3]);
    }

    #[test]
    fn mse_constant_offset_squares() {
        let truth: Vec<GripperState> = (0..10).map(|k| state(k as f64)).collect();
        let pred: Vec<GripperState> = truth
            .iter()
            .map(|s| GripperState::new(s.coords().map(|c| c + 0.3)))
            .collect();
        let mse = mse_per_finger(&pred, &truth, 4).unwrap();
        for row in mse {
            for v in row {
                assert!((v - 0.09).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mse_two_point_hand_example() {
        // L = 4, N_T = 1: usable targets are indices 2 and 3 with errors
        // 1 and 0 on one coordinate -> MSE 0.5 there
        let truth = vec![state(0.0); 4];
        let mut p2 = [0.0; 9];
        p2[0] = 1.0;
        let pred = vec![state(0.0), state(0.0), GripperState::new(p2), state(0.0)];
        let mse = mse_per_finger(&pred, &truth, 1).unwrap();
        assert_eq!(mse[0][0], 0.5);
        assert_eq!(mse[0][1], 0.0);
        assert_eq!(mse[2][2], 0.0);
    }

    #[test]
    fn mse_rejects_short_sequences() {
        let truth = vec![state(0.0); 4];
        assert!(matches!(
            mse_per_finger(&truth, &truth, 3),
            Err(Error::InsufficientData(_))
        ));
        let other = vec![state(0.0); 5];
        assert!(mse_per_finger(&truth, &other, 1).is_err());
    }

    #[test]
    fn mse_matches_naive_double_loop_oracle() {
        use rand::Rng;
        let mut rng = RngSeed(41).stream(0);
        for _ in 0..50 {
            let l = rng.random_range(4..20);
            let n_t = rng.random_range(0..l - 2);
            let truth: Vec<GripperState> = (0..l)
                .map(|_| GripperState::new(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
                .collect();
            let pred: Vec<GripperState> = (0..l)
                .map(|_| GripperState::new(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
                .collect();
            let fast = mse_per_finger(&pred, &truth, n_t).unwrap();
            // naive re-implementation, summed in a different order
            let mut naive = [[0.0f64; 3]; 3];
            for finger in 0..3 {
                for coord in 0..3 {
                    let mut acc = 0.0;
                    let mut count = 0;
                    for t in 0..l {
                        if t >= n_t + 1 {
                            let d = pred[t].as_slice()[3 * finger + coord]
                                - truth[t].as_slice()[3 * finger + coord];
                            acc += d * d;
                            count += 1;
                        }
                    }
                    naive[finger][coord] = acc / count as f64;
                }
            }
            for f in 0..3 {
                for c in 0..3 {
                    assert!((fast[f][c] - naive[f][c]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn unloaded_segments_have_constant_inputs_and_full_length() {
        let cfg = ExperimentConfig::default();
        let segments = generate_offline_unloaded(&cfg, RngSeed(7));
        assert_eq!(segments.len(), 32);
        for (states, inputs) in &segments {
            assert_eq!(states.len(), 32); // 16 s at 2 Hz
            assert_eq!(inputs.len(), 31);
            for u in inputs {
                assert_eq!(u, &inputs[0]);
                let d = u.duty();
                assert!(d[0] >= cfg.u_min && d[0] <= cfg.u_max);
                assert!(d[1] >= cfg.u_min && d[1] <= cfg.u_max);
            }
        }
        // the duty grid spans the band in both channels
        let firsts: Vec<[f64; 2]> = segments.iter().map(|(_, i)| i[0].duty()).collect();
        assert!(firsts.iter().any(|d| d[0] == cfg.u_min));
        assert!(firsts.iter().any(|d| (d[0] - cfg.u_max).abs() < 1e-12));
        assert!(firsts.iter().any(|d| (d[1] - cfg.u_max).abs() < 1e-12));
    }

    #[test]
    fn report_has_full_cartesian_structure() {
        let mut cfg = ExperimentConfig::default();
        cfg.t_steps = 14;
        cfg.noise_std = 0.001;
        let report = benchmark_predictors(
            &[DatasetKind::Online],
            &ALL_METHODS,
            &[3, 5],
            &cfg,
            RngSeed(11),
            2,
        )
        .unwrap();
        assert_eq!(report.cells.len(), 1 * 2 * 2);
        for cell in &report.cells {
            assert!(!cell.missing);
            assert!(cell.fit_stats.count > 0);
            assert!(cell.fit_stats.mean > 0.0);
            for row in cell.mse {
                for v in row {
                    assert!(v.is_finite() && v >= 0.0);
                }
            }
        }
        let csv = report.to_csv();
        assert_eq!(csv.lines().count(), 1 + report.cells.len());
        assert!(report.to_text().contains("x10^"));
    }

    #[test]
    fn campaign_cells_echo_repetitions() {
        let mut cfg = ExperimentConfig::default();
        cfg.t_steps = 10;
        cfg.campaign_reps = 2;
        let report = grasp_campaign(
            &[FingerLayout::Symmetric],
            &[1, 6],
            2,
            &cfg,
            RngSeed(5),
        )
        .unwrap();
        assert_eq!(report.cells.len(), 2);
        for cell in &report.cells {
            assert_eq!(cell.trials, 2);
            assert!(cell.successes <= cell.trials);
        }
        // heavy object never holds
        assert_eq!(report.cell(true, 6).unwrap().successes, 0);
        let text = report.to_text();
        assert!(text.contains("Symmetric Gripper"));
        let csv = report.to_csv();
        assert!(csv.starts_with("layout,object,successes,trials"));
    }
}
