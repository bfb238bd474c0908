//! Command-line pipeline: dataset collection, model fitting, prediction
//! benchmarking, closed-loop grasp trials, and the campaign and
//! prediction report tables.
//!
//! Every command accepts `--config <path>` (flat key=value file) and
//! `--seed <u64>`; flags override config keys. Each run writes `run.log`
//! into the output directory echoing the resolved configuration. All
//! `.csv` outputs are byte-identical for a fixed (command, config, seed);
//! run.log and the `.txt` reports carry wall-clock timings and are the
//! only run-varying files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use softkoop::dictionary::Dictionary;
use softkoop::eval::{self, DatasetKind, ALL_DATASETS, ALL_METHODS, DEFAULT_SIZES};
use softkoop::io::{
    self, ExperimentConfig, TrajectoryRecord, TRAJECTORY_HEADER,
};
use softkoop::koopman::{self, KoopmanModel};
use softkoop::mpc::clamp_input;
use softkoop::online::{self, Estimator};
use softkoop::plant::{self, FingerLayout, ObjectSpec};
use softkoop::sindy;
use softkoop::types::{GripperState, RngSeed};
use softkoop::{Error, Result};

#[derive(Parser)]
#[command(
    name = "softkoop",
    version,
    about = "Online Koopman modeling and MPC for a simulated soft gripper",
    arg_required_else_help = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config file (flat key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed; overrides the config's `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for data-parallel sections.
    #[arg(long, global = true)]
    parallel: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate offline-style datasets from the plant under constant
    /// inputs, plus controlled loaded trials.
    Collect,
    /// Fit a model from a trajectory CSV.
    Fit {
        /// Trajectory CSV to train on.
        #[arg(long)]
        data: PathBuf,
        /// Estimator: acd_edmd or sindy.
        #[arg(long)]
        estimator: Option<String>,
    },
    /// One-step predictions and MSE along a trajectory CSV.
    Predict {
        /// Trajectory CSV to evaluate on.
        #[arg(long)]
        data: PathBuf,
        /// Fitted Koopman model file; without it, the sliding-window
        /// protocol refits at every step.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Sliding-window size N_T; overrides the config key.
        #[arg(long)]
        nt: Option<usize>,
        #[arg(long)]
        estimator: Option<String>,
    },
    /// Run one online grasp trial.
    Control {
        /// Object id 1..=6.
        #[arg(long)]
        object: Option<u8>,
        /// Plate layout: symmetric or asymmetric.
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        estimator: Option<String>,
    },
    /// Prediction-accuracy and training-time benchmark across datasets,
    /// methods and window sizes.
    Bench {
        /// Restrict to one window size instead of {3, 5, 10}.
        #[arg(long)]
        nt: Option<usize>,
    },
    /// Grasp-success campaign over layouts and objects.
    Campaign {
        #[arg(long)]
        layout: Option<String>,
        #[arg(long)]
        object: Option<u8>,
    },
    /// Distill a trial log CSV into plot-ready tracking and error tables.
    Plot {
        /// Trial log CSV produced by `control`.
        #[arg(long)]
        data: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

struct RunLog {
    lines: Vec<String>,
}

impl RunLog {
    fn new(command: &str, cfg: &ExperimentConfig) -> RunLog {
        let mut lines = vec![format!("command={command}")];
        lines.extend(cfg.echo_lines());
        RunLog { lines }
    }

    fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    fn write(&self, out_dir: &Path) -> Result<()> {
        std::fs::write(out_dir.join("run.log"), self.lines.join("\n") + "\n")?;
        Ok(())
    }
}

fn load_cfg(cli_config: &Option<PathBuf>, cli_seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match cli_config {
        Some(path) => io::load_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli_seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn apply_estimator(cfg: &mut ExperimentConfig, flag: &Option<String>) -> Result<()> {
    if let Some(name) = flag {
        cfg.estimator = Estimator::parse(name)?;
    }
    Ok(())
}

fn apply_layout(cfg: &mut ExperimentConfig, flag: &Option<String>) -> Result<()> {
    if let Some(name) = flag {
        cfg.layout = FingerLayout::parse(name).ok_or_else(|| Error::Config {
            key: "layout".into(),
            message: format!("unknown layout {name:?}"),
        })?;
    }
    Ok(())
}

fn apply_object(cfg: &mut ExperimentConfig, flag: Option<u8>) -> Result<()> {
    if let Some(id) = flag {
        if !(1..=6).contains(&id) {
            return Err(Error::Config {
                key: "object".into(),
                message: "object id must be in 1..=6".into(),
            });
        }
        cfg.object = id;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.parallel {
        let threads = n.max(1);
        if rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .is_err()
        {
            // pool already initialized; proceed with the existing one
        }
    }
    let mut cfg = load_cfg(&cli.config, cli.seed)?;
    std::fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();

    match &cli.command {
        Command::Collect => collect(&cfg, out),
        Command::Fit { data, estimator } => {
            apply_estimator(&mut cfg, estimator)?;
            fit(&cfg, data, out)
        }
        Command::Predict {
            data,
            model,
            nt,
            estimator,
        } => {
            apply_estimator(&mut cfg, estimator)?;
            if let Some(n) = nt {
                cfg.n_t = *n;
            }
            cfg.validate()?;
            predict(&cfg, data, model.as_deref(), out)
        }
        Command::Control {
            object,
            layout,
            estimator,
        } => {
            apply_estimator(&mut cfg, estimator)?;
            apply_layout(&mut cfg, layout)?;
            apply_object(&mut cfg, *object)?;
            control(&cfg, out)
        }
        Command::Bench { nt } => bench(&cfg, *nt, out),
        Command::Campaign { layout, object } => {
            let layouts: Vec<FingerLayout> = match layout {
                Some(name) => vec![FingerLayout::parse(name).ok_or_else(|| Error::Config {
                    key: "layout".into(),
                    message: format!("unknown layout {name:?}"),
                })?],
                None => vec![FingerLayout::Symmetric, FingerLayout::Asymmetric],
            };
            let objects: Vec<u8> = match object {
                Some(id) => vec![*id],
                None => (1..=6).collect(),
            };
            campaign(&cfg, &layouts, &objects, out)
        }
        Command::Plot { data } => plot(&cfg, data, out),
    }
}

/// 16-second constant-input segments at 2 Hz plus the loaded grasp
/// trials, written as raw (unfiltered) trajectory CSVs.
fn collect(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut log = RunLog::new("collect", cfg);
    let params = cfg.plant_params();
    let seed = RngSeed(cfg.seed);
    let unloaded_dir = out.join("unloaded");
    let loaded_dir = out.join("loaded");
    std::fs::create_dir_all(&unloaded_dir)?;
    std::fs::create_dir_all(&loaded_dir)?;

    let samples = (cfg.segment_seconds / params.dt).round() as usize;
    let span = cfg.u_max - cfg.u_min;
    // one collection session: all segments share a plant draw
    let session_params = params.aged(cfg.offline_session_age, &mut seed.derive(1000).stream(3));
    for s in 0..cfg.offline_segments {
        let i = s % 8;
        let j = (s / 8) % 4;
        let u = clamp_input(
            [
                cfg.u_min + span * i as f64 / 7.0,
                cfg.u_min + span * j as f64 / 3.0,
            ],
            &cfg.mpc_config(),
        );
        let seg_seed = seed.derive(1000 + s as u64);
        let rng = (params.noise_std > 0.0 || params.drift_rate > 0.0).then(|| seg_seed.stream(2));
        let mut plant = plant::GripperPlant::pressurized(session_params.clone(), None, rng, cfg.u_min);
        let mut records = Vec::with_capacity(samples);
        for k in 0..samples {
            records.push(TrajectoryRecord {
                t: k as f64 * params.dt,
                state: plant.observe(),
                input: u,
            });
            plant.apply(&u);
        }
        let path = unloaded_dir.join(format!("segment_{s:02}.csv"));
        io::save_trajectory(&path, &records)?;
    }
    log.note(format!(
        "unloaded: {} segments of {} samples at {} Hz",
        cfg.offline_segments,
        samples,
        1.0 / params.dt
    ));

    // loaded trials: controlled grasps on objects 1, 2, 3
    const LOADED_OBJECTS: [u8; 8] = [1, 1, 1, 1, 2, 2, 3, 3];
    let mut session2 = params.aged(cfg.offline_session_age, &mut seed.derive(2000).stream(3));
    session2.trial_variability = 0.0;
    let mut loop_cfg = cfg.online_config();
    loop_cfg.total_steps = 26;
    loop_cfg.hold_tol = 0.0;
    let reference = plant::closing_reference(&params, cfg.u_min, cfg.u_max, 26, cfg.ramp_steps);
    for (k, &obj_id) in LOADED_OBJECTS.iter().enumerate() {
        let object = ObjectSpec::by_id(obj_id).expect("loaded objects exist");
        let trial = online::run_online_trial(
            &session2,
            Some(&object),
            &reference,
            &loop_cfg,
            seed.derive(2000 + k as u64),
        )?;
        let records: Vec<TrajectoryRecord> = trial
            .control_rows()
            .iter()
            .map(|r| TrajectoryRecord {
                t: r.time,
                state: r.state,
                input: r.input,
            })
            .collect();
        let path = loaded_dir.join(format!("trial_{k}.csv"));
        io::save_trajectory(&path, &records)?;
    }
    log.note("loaded: 8 grasp trials of 26 points (objects 1,1,1,1,2,2,3,3)".to_string());
    log.write(out)
}

fn fit(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let mut log = RunLog::new("fit", cfg);
    let records = io::load_trajectory(data)?;
    if records.len() < 2 {
        return Err(Error::InsufficientData(
            "need at least two trajectory rows".into(),
        ));
    }
    let states: Vec<GripperState> = records.iter().map(|r| r.state).collect();
    let inputs: Vec<_> = records[..records.len() - 1]
        .iter()
        .map(|r| r.input)
        .collect();
    match cfg.estimator {
        Estimator::AcdEdmd => {
            let dict = Dictionary::gripper();
            let model = koopman::fit_edmd(&states, &inputs, &dict, cfg.svd_tol)?;
            std::fs::write(out.join("model.txt"), model.to_text())?;
            log.note(format!(
                "fitted acd_edmd model: {} snapshots, fit_time={:.6}s -> model.txt",
                model.snapshot_count(),
                model.fit_time()
            ));
        }
        Estimator::Sindy => {
            let model = sindy::sindy_fit(
                &states,
                &inputs,
                cfg.lambda,
                cfg.lasso_max_iter,
                cfg.lasso_tol,
            )?;
            std::fs::write(out.join("sindy_coefficients.csv"), model.coefficients_csv())?;
            log.note(format!(
                "fitted sindy model: sparsity={:.3}, fit_time={:.6}s -> sindy_coefficients.csv",
                model.sparsity(),
                model.fit_time()
            ));
        }
    }
    log.write(out)
}

fn predict(cfg: &ExperimentConfig, data: &Path, model: Option<&Path>, out: &Path) -> Result<()> {
    let mut log = RunLog::new("predict", cfg);
    let records = io::load_trajectory(data)?;
    let states: Vec<GripperState> = records.iter().map(|r| r.state).collect();
    let inputs: Vec<_> = records.iter().map(|r| r.input).collect();
    let n_t = cfg.n_t;

    let predictions = match model {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let model = KoopmanModel::from_text(&text)?;
            log.note(format!("fixed model from {}", path.display()));
            eval::fixed_model_predictions(
                &move |s: &GripperState, u: &softkoop::ControlInput| {
                    koopman::predict_one_step(&model, s, u)
                },
                &states,
                &inputs,
                n_t,
            )
        }
        None => {
            let (preds, times) =
                eval::sliding_window_predictions(cfg.estimator, &states, &inputs, n_t, cfg)?;
            let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
            log.note(format!(
                "sliding window N_T={} with {}: {} refits, mean fit {:.6}s",
                n_t,
                cfg.estimator.name(),
                times.len(),
                mean
            ));
            preds
        }
    };

    let mut csv = String::from("t");
    for c in TRAJECTORY_HEADER.split(',').skip(1).take(9) {
        let _ = write!(csv, ",{c}");
    }
    for c in ["x1", "y1", "z1", "x2", "y2", "z2", "x3", "y3", "z3"] {
        let _ = write!(csv, ",p{c}");
    }
    csv.push('\n');
    for (k, r) in records.iter().enumerate() {
        let _ = write!(csv, "{}", r.t);
        for v in r.state.as_slice() {
            let _ = write!(csv, ",{v}");
        }
        if k <= n_t {
            csv.push_str(&",nan".repeat(9));
        } else {
            for v in predictions[k].as_slice() {
                let _ = write!(csv, ",{v}");
            }
        }
        csv.push('\n');
    }
    std::fs::write(out.join("predictions.csv"), csv)?;

    let mse = eval::mse_per_finger(&predictions, &states, n_t)?;
    let mut mse_csv = String::from("finger,mse_x,mse_y,mse_z\n");
    for (f, row) in mse.iter().enumerate() {
        let _ = writeln!(mse_csv, "{},{},{},{}", f + 1, row[0], row[1], row[2]);
    }
    std::fs::write(out.join("mse.csv"), mse_csv)?;
    log.note("wrote predictions.csv, mse.csv");
    log.write(out)
}

fn control(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut log = RunLog::new("control", cfg);
    let params = cfg.plant_params();
    let object = cfg.object_spec();
    let loop_cfg = cfg.online_config();
    let reference = plant::closing_reference(
        &params,
        cfg.u_min,
        cfg.u_max,
        loop_cfg.total_steps,
        cfg.ramp_steps,
    );
    let trial = online::run_online_trial(
        &params,
        Some(&object),
        &reference,
        &loop_cfg,
        RngSeed(cfg.seed),
    )?;
    io::save_trial_log(&out.join("trial.csv"), &trial)?;

    let success = plant::grasp_outcome(&trial, &object, &params);
    let final_err = trial
        .control_rows()
        .last()
        .map(|r| {
            r.state
                .as_slice()
                .iter()
                .zip(r.reference.as_slice())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        })
        .unwrap_or(f64::NAN);

    // per-trial summary line, appended to the results index
    let index = out.join("results_index.csv");
    let mut row = String::new();
    if !index.exists() {
        row.push_str("layout,object,estimator,seed,steps,aborted,grasp_success,final_tracking_error\n");
    }
    let _ = writeln!(
        row,
        "{},{},{},{},{},{},{},{}",
        params.layout.name(),
        object.id,
        cfg.estimator.name(),
        cfg.seed,
        trial.rows.len(),
        trial.aborted.is_some(),
        success,
        final_err
    );
    use std::io::Write as _;
    std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&index)?
        .write_all(row.as_bytes())?;

    let fit_times: Vec<f64> = trial.rows.iter().filter_map(|r| r.fit_seconds).collect();
    let mpc_times: Vec<f64> = trial.rows.iter().filter_map(|r| r.mpc_seconds).collect();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    log.note(format!(
        "trial: {} rows, fits={}, grasp_success={}, mean fit {:.6}s, mean mpc {:.6}s",
        trial.rows.len(),
        trial.fits_performed,
        success,
        mean(&fit_times),
        mean(&mpc_times)
    ));
    log.note("wrote trial.csv, results_index.csv");
    log.write(out)
}

fn bench(cfg: &ExperimentConfig, nt: Option<usize>, out: &Path) -> Result<()> {
    let mut log = RunLog::new("bench", cfg);
    let sizes: Vec<usize> = match nt {
        Some(n) => vec![n],
        None => DEFAULT_SIZES.to_vec(),
    };
    let report = eval::benchmark_predictors(
        &ALL_DATASETS,
        &ALL_METHODS,
        &sizes,
        cfg,
        RngSeed(cfg.seed),
        cfg.bench_reps,
    )?;
    std::fs::write(out.join("prediction_report.csv"), report.to_csv())?;
    std::fs::write(out.join("prediction_report.txt"), report.to_text())?;
    log.note(format!(
        "bench: {} cells x {} repetitions -> prediction_report.csv, prediction_report.txt",
        report.cells.len(),
        report.repetitions
    ));
    for cell in &report.cells {
        if cell.dataset == DatasetKind::Online {
            log.note(format!(
                "timing {} N_T={}: mean={:.6}s median={:.6}s over {} fits",
                cell.method.name(),
                cell.n_t,
                cell.fit_stats.mean,
                cell.fit_stats.median,
                cell.fit_stats.count
            ));
        }
    }
    log.write(out)
}

fn campaign(
    cfg: &ExperimentConfig,
    layouts: &[FingerLayout],
    objects: &[u8],
    out: &Path,
) -> Result<()> {
    let mut log = RunLog::new("campaign", cfg);
    let report = eval::grasp_campaign(layouts, objects, cfg.campaign_reps, cfg, RngSeed(cfg.seed))?;
    std::fs::write(out.join("grasp_report.csv"), report.to_csv())?;
    std::fs::write(out.join("grasp_report.txt"), report.to_text())?;
    log.note(format!(
        "campaign: {} cells x {} repetitions -> grasp_report.csv, grasp_report.txt",
        report.cells.len(),
        report.repetitions
    ));
    log.write(out)
}

fn plot(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    let mut log = RunLog::new("plot", cfg);
    let rows = io::load_trial_csv(data)?;

    // representative bending coordinates per finger, actual vs reference
    let mut tracking = String::from("t,phase,z1,z2,z3,rz1,rz2,rz3\n");
    for r in &rows {
        let s = r.state.as_slice();
        let rf = r.reference.as_slice();
        let _ = writeln!(
            tracking,
            "{},{},{},{},{},{},{},{}",
            r.time, r.phase, s[2], s[5], s[8], rf[2], rf[5], rf[8]
        );
    }
    std::fs::write(out.join("plot_tracking.csv"), tracking)?;

    let mut error = String::from("t,phase,tracking_error,prediction_error,total_contact_force\n");
    for (k, r) in rows.iter().enumerate() {
        let track: f64 = r
            .state
            .as_slice()
            .iter()
            .zip(r.reference.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // prediction at k refers to the state observed at k+1
        let pred_err = match (r.prediction, rows.get(k + 1)) {
            (Some(p), Some(next)) => {
                let e: f64 = p
                    .as_slice()
                    .iter()
                    .zip(next.state.as_slice())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                format!("{e}")
            }
            _ => "nan".to_string(),
        };
        let force: f64 = r.contact_forces.iter().sum();
        let _ = writeln!(error, "{},{},{},{},{}", r.time, r.phase, track, pred_err, force);
    }
    std::fs::write(out.join("plot_error.csv"), error)?;
    log.note(format!(
        "plotted {} rows -> plot_tracking.csv, plot_error.csv",
        rows.len()
    ));
    log.write(out)
}
