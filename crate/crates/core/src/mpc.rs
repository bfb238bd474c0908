//! Receding-horizon controller: at each step, exhaustively scores every
//! input sequence from a per-channel grid over the actuation band using
//! rollouts of the current Koopman model, and applies the first input of
//! the cheapest plan.
//!
//! With two channels the enumeration is grid_levels^(2*horizon) rollouts
//! per step, exact over the grid and deterministic: ties break toward the
//! lexicographically smallest input sequence, which is also how candidate
//! indices are ordered, so the sequential and rayon paths return the same
//! plan bit for bit.

use crate::error::{Error, Result};
use crate::koopman::{predict_one_step, KoopmanModel};
use crate::types::{ControlInput, GripperState, ReferenceTrajectory, INPUT_DIM, STATE_DIM};

/// Per-coordinate or uniform state-error weight.
#[derive(Debug, Clone, PartialEq)]
pub enum StateWeight {
    Uniform(f64),
    PerCoord([f64; STATE_DIM]),
}

impl StateWeight {
    fn weight(&self, coord: usize) -> f64 {
        match self {
            StateWeight::Uniform(q) => *q,
            StateWeight::PerCoord(q) => q[coord],
        }
    }

    fn is_valid(&self) -> bool {
        match self {
            StateWeight::Uniform(q) => q.is_finite() && *q >= 0.0,
            StateWeight::PerCoord(q) => q.iter().all(|v| v.is_finite() && *v >= 0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcConfig {
    /// Prediction horizon H_p.
    pub horizon: usize,
    /// Actuation band.
    pub u_min: f64,
    pub u_max: f64,
    /// Grid levels per input channel.
    pub grid_levels: usize,
    /// State-error weight Q.
    pub state_weight: StateWeight,
    /// Input-effort weight R.
    pub input_weight: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 3,
            u_min: 0.20,
            u_max: 0.35,
            grid_levels: 4,
            state_weight: StateWeight::Uniform(1.0),
            input_weight: 0.0,
        }
    }
}

impl MpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::Config {
                key: "H_p".into(),
                message: "horizon must be at least 1".into(),
            });
        }
        if self.grid_levels < 2 {
            return Err(Error::Config {
                key: "grid_levels".into(),
                message: "need at least 2 grid levels".into(),
            });
        }
        if !(self.u_min.is_finite() && self.u_max.is_finite() && self.u_min < self.u_max) {
            return Err(Error::Config {
                key: "u_min".into(),
                message: format!("band [{}, {}] is not an interval", self.u_min, self.u_max),
            });
        }
        if !self.state_weight.is_valid() {
            return Err(Error::Config {
                key: "Q".into(),
                message: "state weight must be finite and nonnegative".into(),
            });
        }
        if !(self.input_weight.is_finite() && self.input_weight >= 0.0) {
            return Err(Error::Config {
                key: "R".into(),
                message: "input weight must be finite and nonnegative".into(),
            });
        }
        Ok(())
    }

    /// Evenly spaced duty levels spanning the band, endpoints included.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_levels;
        (0..n)
            .map(|k| self.u_min + (self.u_max - self.u_min) * k as f64 / (n - 1) as f64)
            .collect()
    }

    /// Number of candidate input sequences scored per solve.
    pub fn candidate_count(&self) -> usize {
        self.grid_levels.pow(2 * self.horizon as u32)
    }
}

/// Winning plan for one solve.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    pub first_input: ControlInput,
    pub planned_inputs: Vec<ControlInput>,
    pub predicted_states: Vec<GripperState>,
    pub cost: f64,
    pub evaluations: usize,
}

/// Componentwise clamp into the configured band.
pub fn clamp_input(raw: [f64; INPUT_DIM], cfg: &MpcConfig) -> ControlInput {
    ControlInput::new(
        raw[0].clamp(cfg.u_min, cfg.u_max),
        raw[1].clamp(cfg.u_min, cfg.u_max),
    )
}

/// Decodes candidate index `idx` into its input sequence. Digits are
/// most-significant-first, so ascending indices enumerate sequences in
/// lexicographic order starting from the all-u_min plan.
fn decode_plan(idx: usize, grid: &[f64], horizon: usize) -> Vec<ControlInput> {
    let levels = grid.len();
    let digits = 2 * horizon;
    let mut rem = idx;
    let mut raw = vec![0usize; digits];
    for d in (0..digits).rev() {
        raw[d] = rem % levels;
        rem /= levels;
    }
    (0..horizon)
        .map(|i| ControlInput::new(grid[raw[2 * i]], grid[raw[2 * i + 1]]))
        .collect()
}

/// Stage-cost rollout; returns NaN when any predicted state goes
/// non-finite so the candidate is skipped.
fn plan_cost(
    model: &KoopmanModel,
    current: &GripperState,
    reference: &ReferenceTrajectory,
    t: usize,
    cfg: &MpcConfig,
    plan: &[ControlInput],
) -> f64 {
    let mut cost = 0.0;
    let mut state = *current;
    for (i, u) in plan.iter().enumerate() {
        state = predict_one_step(model, &state, u);
        if !state.is_finite() {
            return f64::NAN;
        }
        let target = reference.at(t + i + 1);
        for c in 0..STATE_DIM {
            let d = state.as_slice()[c] - target.as_slice()[c];
            cost += cfg.state_weight.weight(c) * d * d;
        }
        let du = u.duty();
        cost += cfg.input_weight * (du[0] * du[0] + du[1] * du[1]);
    }
    cost
}

/// Reduction state: cheapest (cost, candidate index) with ties going to
/// the smaller index. NaN costs never win.
fn better(a: (f64, usize), b: (f64, usize)) -> (f64, usize) {
    if b.0.is_nan() {
        return a;
    }
    if a.0.is_nan() {
        return b;
    }
    if (b.0, b.1) < (a.0, a.1) {
        b
    } else {
        a
    }
}

fn finish_solution(
    model: &KoopmanModel,
    current: &GripperState,
    cfg: &MpcConfig,
    best: (f64, usize),
) -> Result<MpcSolution> {
    let (cost, idx) = best;
    if cost.is_nan() {
        return Err(Error::NoFeasiblePlan);
    }
    let grid = cfg.grid();
    let planned_inputs = decode_plan(idx, &grid, cfg.horizon);
    let predicted_states = crate::koopman::predict_rollout(model, current, &planned_inputs);
    Ok(MpcSolution {
        first_input: planned_inputs[0],
        planned_inputs,
        predicted_states,
        cost,
        evaluations: cfg.candidate_count(),
    })
}

/// Sequential exhaustive solve; the `parallel` feature's default entry
/// point produces identical output.
pub fn solve_step_seq(
    model: &KoopmanModel,
    current: &GripperState,
    reference: &ReferenceTrajectory,
    t: usize,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    cfg.validate()?;
    let grid = cfg.grid();
    let total = cfg.candidate_count();
    let mut best = (f64::NAN, usize::MAX);
    for idx in 0..total {
        let plan = decode_plan(idx, &grid, cfg.horizon);
        let cost = plan_cost(model, current, reference, t, cfg, &plan);
        best = better(best, (cost, idx));
    }
    finish_solution(model, current, cfg, best)
}

/// Exhaustive grid solve, fanning candidate scoring across threads.
#[cfg(feature = "parallel")]
pub fn solve_step_par(
    model: &KoopmanModel,
    current: &GripperState,
    reference: &ReferenceTrajectory,
    t: usize,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    use rayon::prelude::*;
    cfg.validate()?;
    let grid = cfg.grid();
    let total = cfg.candidate_count();
    let best = (0..total)
        .into_par_iter()
        .map(|idx| {
            let plan = decode_plan(idx, &grid, cfg.horizon);
            (plan_cost(model, current, reference, t, cfg, &plan), idx)
        })
        .reduce(|| (f64::NAN, usize::MAX), better);
    finish_solution(model, current, cfg, best)
}

/// Solves the receding-horizon problem at timestep `t` from `current`.
pub fn solve_step(
    model: &KoopmanModel,
    current: &GripperState,
    reference: &ReferenceTrajectory,
    t: usize,
    cfg: &MpcConfig,
) -> Result<MpcSolution> {
    #[cfg(feature = "parallel")]
    {
        solve_step_par(model, current, reference, t, cfg)
    }
    #[cfg(not(feature = "parallel"))]
    {
        solve_step_seq(model, current, reference, t, cfg)
    }
}

/// Re-scores one externally supplied plan; test oracle hook.
pub fn score_plan(
    model: &KoopmanModel,
    current: &GripperState,
    reference: &ReferenceTrajectory,
    t: usize,
    cfg: &MpcConfig,
    plan: &[ControlInput],
) -> f64 {
    plan_cost(model, current, reference, t, cfg, plan)
}

/// Enumerates every candidate plan in index order; test oracle hook.
pub fn enumerate_plans(cfg: &MpcConfig) -> Vec<Vec<ControlInput>> {
    let grid = cfg.grid();
    (0..cfg.candidate_count())
        .map(|idx| decode_plan(idx, &grid, cfg.horizon))
        .collect()
}

/// Builds a Koopman model over the linear-with-inputs dictionary whose
/// rollouts follow xi' = A xi + B u exactly; shared by tests and benches.
pub fn linear_model(a: &nalgebra::DMatrix<f64>, b: &nalgebra::DMatrix<f64>) -> KoopmanModel {
    use crate::dictionary::Dictionary;
    assert_eq!(a.nrows(), STATE_DIM);
    assert_eq!(b.nrows(), STATE_DIM);
    assert_eq!(b.ncols(), INPUT_DIM);
    let dict = Dictionary::linear(STATE_DIM, INPUT_DIM);
    let n = dict.dimension();
    // row convention: lifted rows [xi, u] advance by right-multiplication
    let mut k = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..STATE_DIM {
        for j in 0..STATE_DIM {
            k[(i, j)] = a[(j, i)];
        }
    }
    for c in 0..INPUT_DIM {
        for j in 0..STATE_DIM {
            k[(STATE_DIM + c, j)] = b[(j, c)];
        }
        k[(STATE_DIM + c, STATE_DIM + c)] = 1.0;
    }
    KoopmanModel::from_parts(dict, k)
}

/// Reference that repeats one target forever.
pub fn constant_reference(target: GripperState, dt: f64) -> ReferenceTrajectory {
    ReferenceTrajectory::new(vec![target], dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::Dictionary;
    use crate::types::RngSeed;
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::seq::SliceRandom;
    use rand::Rng;

    fn identity_model() -> KoopmanModel {
        // persistence: xi' = xi regardless of u
        let a = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
        let b = DMatrix::<f64>::zeros(STATE_DIM, INPUT_DIM);
        linear_model(&a, &b)
    }

    #[test]
    fn degenerate_tie_returns_all_u_min() {
        let model = identity_model();
        let cfg = MpcConfig::default();
        let reference = constant_reference(GripperState::zero(), 0.5);
        let sol = solve_step_seq(&model, &GripperState::new([0.1; 9]), &reference, 0, &cfg).unwrap();
        for u in &sol.planned_inputs {
            assert_eq!(u.duty(), [cfg.u_min, cfg.u_min]);
        }
        assert_eq!(sol.first_input, sol.planned_inputs[0]);
        assert_eq!(sol.evaluations, cfg.candidate_count());
    }

    #[test]
    fn scalar_toy_picks_forcing_input() {
        // xi' = xi + u on the first coordinate only
        let a = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
        let mut b = DMatrix::<f64>::zeros(STATE_DIM, INPUT_DIM);
        b[(0, 0)] = 1.0;
        let model = linear_model(&a, &b);
        let mut target = [0.0; 9];
        target[0] = 1.0;
        let reference = constant_reference(GripperState::new(target), 0.5);
        let cfg = MpcConfig {
            horizon: 1,
            u_min: 0.0,
            u_max: 1.0,
            grid_levels: 3,
            ..MpcConfig::default()
        };
        let sol = solve_step_seq(&model, &GripperState::zero(), &reference, 0, &cfg).unwrap();
        assert_eq!(sol.first_input.duty(), [1.0, 0.0]);
        assert_abs_diff_eq!(sol.cost, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn clamp_examples() {
        let cfg = MpcConfig::default();
        assert_eq!(clamp_input([0.5, 0.1], &cfg).duty(), [0.35, 0.20]);
        assert_eq!(clamp_input([0.25, 0.30], &cfg).duty(), [0.25, 0.30]);
        assert_eq!(clamp_input([-1.0, 2.0], &cfg).duty(), [0.20, 0.35]);
    }

    #[test]
    fn solution_beats_shuffled_exhaustive_oracle() {
        let mut rng = RngSeed(31).stream(0);
        for case in 0..30 {
            let a = DMatrix::<f64>::from_fn(STATE_DIM, STATE_DIM, |_, _| {
                rng.random_range(-0.3..0.3)
            });
            let b =
                DMatrix::<f64>::from_fn(STATE_DIM, INPUT_DIM, |_, _| rng.random_range(-0.5..0.5));
            let model = linear_model(&a, &b);
            let cfg = MpcConfig {
                horizon: rng.random_range(1..3),
                grid_levels: rng.random_range(2..4),
                input_weight: if case % 2 == 0 { 0.0 } else { 0.1 },
                ..MpcConfig::default()
            };
            let current = GripperState::new(std::array::from_fn(|_| rng.random_range(-0.2..0.2)));
            let reference = constant_reference(
                GripperState::new(std::array::from_fn(|_| rng.random_range(-0.2..0.2))),
                0.5,
            );
            let sol = solve_step(&model, &current, &reference, 0, &cfg).unwrap();

            let mut plans: Vec<(usize, Vec<ControlInput>)> =
                enumerate_plans(&cfg).into_iter().enumerate().collect();
            plans.shuffle(&mut rng);
            for (idx, plan) in plans {
                let cost = score_plan(&model, &current, &reference, 0, &cfg, &plan);
                assert!(
                    sol.cost <= cost + 1e-15,
                    "candidate {idx} beats solver: {cost} < {}",
                    sol.cost
                );
                if cost == sol.cost {
                    // ties must resolve toward the smaller index
                    let winner_idx = enumerate_plans(&cfg)
                        .iter()
                        .position(|p| *p == sol.planned_inputs)
                        .unwrap();
                    assert!(winner_idx <= idx);
                }
            }
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_solutions_match() {
        let mut rng = RngSeed(32).stream(0);
        for _ in 0..10 {
            let a =
                DMatrix::<f64>::from_fn(STATE_DIM, STATE_DIM, |_, _| rng.random_range(-0.3..0.3));
            let b =
                DMatrix::<f64>::from_fn(STATE_DIM, INPUT_DIM, |_, _| rng.random_range(-0.5..0.5));
            let model = linear_model(&a, &b);
            let cfg = MpcConfig::default();
            let current = GripperState::new(std::array::from_fn(|_| rng.random_range(-0.2..0.2)));
            let reference = constant_reference(
                GripperState::new(std::array::from_fn(|_| rng.random_range(-0.2..0.2))),
                0.5,
            );
            let s = solve_step_seq(&model, &current, &reference, 0, &cfg).unwrap();
            let p = solve_step_par(&model, &current, &reference, 0, &cfg).unwrap();
            assert_eq!(s, p);
        }
    }

    #[test]
    fn first_input_always_inside_band() {
        let mut rng = RngSeed(33).stream(0);
        let dict = Dictionary::gripper();
        let n = dict.dimension();
        for _ in 0..20 {
            let k = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-0.2..0.2));
            let model = KoopmanModel::from_parts(dict.clone(), k);
            let cfg = MpcConfig::default();
            let current = GripperState::new(std::array::from_fn(|_| rng.random_range(-0.1..0.1)));
            let reference = constant_reference(
                GripperState::new(std::array::from_fn(|_| rng.random_range(-0.1..0.1))),
                0.5,
            );
            let sol = solve_step(&model, &current, &reference, 0, &cfg).unwrap();
            let u = sol.first_input.duty();
            assert!(u[0] >= cfg.u_min && u[0] <= cfg.u_max);
            assert!(u[1] >= cfg.u_min && u[1] <= cfg.u_max);
        }
    }

    #[test]
    fn solver_is_deterministic() {
        let mut rng = RngSeed(34).stream(0);
        let a = DMatrix::<f64>::from_fn(STATE_DIM, STATE_DIM, |_, _| rng.random_range(-0.3..0.3));
        let b = DMatrix::<f64>::from_fn(STATE_DIM, INPUT_DIM, |_, _| rng.random_range(-0.5..0.5));
        let model = linear_model(&a, &b);
        let cfg = MpcConfig::default();
        let current = GripperState::new([0.05; 9]);
        let reference = constant_reference(GripperState::zero(), 0.5);
        let s1 = solve_step(&model, &current, &reference, 3, &cfg).unwrap();
        let s2 = solve_step(&model, &current, &reference, 3, &cfg).unwrap();
        assert_eq!(s1, s2);
    }

    #[test]
    fn closed_loop_error_non_increasing_on_exact_scalar_plant() {
        // xi' = xi + u on coordinate 0; the model is the plant
        let a = DMatrix::<f64>::identity(STATE_DIM, STATE_DIM);
        let mut b = DMatrix::<f64>::zeros(STATE_DIM, INPUT_DIM);
        b[(0, 0)] = 1.0;
        let model = linear_model(&a, &b);
        let mut target = [0.0; 9];
        target[0] = 1.0;
        let reference = constant_reference(GripperState::new(target), 0.5);
        let cfg = MpcConfig {
            horizon: 3,
            u_min: 0.0,
            u_max: 0.5,
            grid_levels: 5,
            ..MpcConfig::default()
        };
        let mut state = GripperState::zero();
        let mut errors = Vec::new();
        for t in 0..15 {
            let sol = solve_step(&model, &state, &reference, t, &cfg).unwrap();
            let u = sol.first_input.duty();
            let mut coords = state.coords();
            coords[0] += u[0];
            state = GripperState::new(coords);
            errors.push((state.coords()[0] - 1.0).abs());
        }
        for w in errors[cfg.horizon..].windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "error grew: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn no_feasible_plan_when_model_diverges_everywhere() {
        let dict = Dictionary::gripper();
        let n = dict.dimension();
        // a transition matrix full of NaN poisons every rollout
        let k = DMatrix::<f64>::from_element(n, n, f64::NAN);
        let model = KoopmanModel::from_parts(dict, k);
        let cfg = MpcConfig::default();
        let reference = constant_reference(GripperState::zero(), 0.5);
        let out = solve_step(&model, &GripperState::zero(), &reference, 0, &cfg);
        assert!(matches!(out, Err(Error::NoFeasiblePlan)));
    }

    #[test]
    fn evaluation_count_matches_grid_power() {
        for (levels, horizon) in [(2usize, 1usize), (3, 2), (4, 3)] {
            let cfg = MpcConfig {
                horizon,
                grid_levels: levels,
                ..MpcConfig::default()
            };
            assert_eq!(cfg.candidate_count(), levels.pow(2 * horizon as u32));
            assert_eq!(enumerate_plans(&cfg).len(), cfg.candidate_count());
        }
    }
}
