//! SINDy baseline: sparse regression of next states over a fixed candidate
//! library Theta(X) = [1, X, X^2, sin(X), cos(X)] with X = (xi, u), solved
//! per target column by coordinate-descent LASSO with soft thresholding.
//!
//! This is the discrete-time variant: xi_{t+1} is regressed directly on
//! Theta(xi_t, u_t), which is what the prediction benchmark compares.
//! Features are standardized (zero mean, unit population variance) before
//! the descent and coefficients are mapped back afterwards; the constant
//! column is the unpenalized intercept and stays untouched. Shrinkage on
//! raw meter-scale features would make lambda meaningless otherwise.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::types::{unflatten, ControlInput, GripperState, INPUT_DIM, STATE_DIM};

/// Library width: 1 constant + 4 elementwise blocks over the 11-vector X.
pub const LIBRARY_DIM: usize = 1 + 4 * (STATE_DIM + INPUT_DIM);

pub const DEFAULT_LAMBDA: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: usize = 1000;
/// Convergence tolerance on the max per-sweep coefficient change. The
/// default of 0 runs the full sweep budget: on the tiny online windows an
/// early exit fires within a couple of sweeps and the per-step training
/// cost stops reflecting the solver's actual workload.
pub const DEFAULT_TOL: f64 = 0.0;

/// Library coefficients mapping Theta(xi, u) to the next state.
#[derive(Debug, Clone)]
pub struct SindyModel {
    /// L x 9 coefficient matrix.
    coefficients: DMatrix<f64>,
    lasso_lambda: f64,
    fit_time: f64,
    /// Fraction of near-zero entries.
    sparsity: f64,
}

impl SindyModel {
    pub fn coefficients(&self) -> &DMatrix<f64> {
        &self.coefficients
    }

    pub fn lambda(&self) -> f64 {
        self.lasso_lambda
    }

    pub fn fit_time(&self) -> f64 {
        self.fit_time
    }

    pub fn sparsity(&self) -> f64 {
        self.sparsity
    }

    /// Coefficient matrix as CSV with one labeled row per library term.
    pub fn coefficients_csv(&self) -> String {
        let mut out = String::from("term,x1,y1,z1,x2,y2,z2,x3,y3,z3\n");
        for (row, name) in library_term_names().iter().enumerate() {
            out.push_str(name);
            for col in 0..STATE_DIM {
                out.push(',');
                out.push_str(&format!("{}", self.coefficients[(row, col)]));
            }
            out.push('\n');
        }
        out
    }
}

/// Evaluates the candidate library at one (state, input) pair.
pub fn sindy_library(state: &GripperState, input: &ControlInput) -> DVector<f64> {
    let mut x = [0.0; STATE_DIM + INPUT_DIM];
    x[..STATE_DIM].copy_from_slice(state.as_slice());
    x[STATE_DIM..].copy_from_slice(input.as_slice());

    let mut out = DVector::zeros(LIBRARY_DIM);
    out[0] = 1.0;
    let w = STATE_DIM + INPUT_DIM;
    for (i, &v) in x.iter().enumerate() {
        out[1 + i] = v;
        out[1 + w + i] = v * v;
        out[1 + 2 * w + i] = v.sin();
        out[1 + 3 * w + i] = v.cos();
    }
    out
}

/// Names of the library terms in evaluation order.
pub fn library_term_names() -> Vec<String> {
    let vars = [
        "x1", "y1", "z1", "x2", "y2", "z2", "x3", "y3", "z3", "u1", "u2",
    ];
    let mut names = vec!["1".to_string()];
    names.extend(vars.iter().map(|v| v.to_string()));
    names.extend(vars.iter().map(|v| format!("{v}^2")));
    names.extend(vars.iter().map(|v| format!("sin({v})")));
    names.extend(vars.iter().map(|v| format!("cos({v})")));
    names
}

/// Soft-thresholding operator S(rho, lambda).
pub fn soft_threshold(rho: f64, lambda: f64) -> f64 {
    if rho > lambda {
        rho - lambda
    } else if rho < -lambda {
        -(-rho - lambda)
    } else {
        0.0
    }
}

/// Cyclic coordinate-descent LASSO for one target column:
/// minimize (1/2M)||y - F beta||^2 + lambda ||beta||_1.
///
/// `penalized[j] = false` exempts a column (used for the intercept).
/// Returns the coefficients and the objective value after each sweep;
/// the trace is non-increasing. All-zero feature columns keep
/// coefficient zero. No standardization happens here.
pub fn lasso_coordinate_descent(
    features: &DMatrix<f64>,
    target: &DVector<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
    penalized: Option<&[bool]>,
) -> (DVector<f64>, Vec<f64>) {
    let m = features.nrows();
    let l = features.ncols();
    assert_eq!(target.len(), m);
    let m_f = m as f64;

    // per-column energy c_j = (1/M) sum F_ij^2
    let energy: Vec<f64> = (0..l)
        .map(|j| features.column(j).norm_squared() / m_f)
        .collect();

    let mut beta = DVector::<f64>::zeros(l);
    let mut residual = target.clone();
    let mut trace = Vec::new();

    for _sweep in 0..max_iter {
        let mut max_delta = 0.0f64;
        for j in 0..l {
            if energy[j] == 0.0 {
                continue;
            }
            let col = features.column(j);
            let old = beta[j];
            // correlation with residual, current coordinate added back
            let rho = col.dot(&residual) / m_f + energy[j] * old;
            let pen = penalized.map_or(true, |p| p[j]);
            let new = if pen {
                soft_threshold(rho, lambda) / energy[j]
            } else {
                rho / energy[j]
            };
            if new != old {
                residual.axpy(old - new, &col.into_owned(), 1.0);
                beta[j] = new;
                max_delta = max_delta.max((new - old).abs());
            }
        }
        let l1: f64 = beta
            .iter()
            .enumerate()
            .filter(|(j, _)| penalized.map_or(true, |p| p[*j]))
            .map(|(_, b)| b.abs())
            .sum();
        trace.push(residual.norm_squared() / (2.0 * m_f) + lambda * l1);
        if max_delta < tol {
            break;
        }
    }
    (beta, trace)
}

struct Standardized {
    features: DMatrix<f64>,
    means: Vec<f64>,
    scales: Vec<f64>,
    intercept_col: Option<usize>,
    penalized: Vec<bool>,
}

/// Centers and scales non-constant columns to unit population variance.
/// The first zero-variance nonzero column becomes the unpenalized
/// intercept; remaining zero-variance columns are zeroed out.
fn standardize(features: &DMatrix<f64>) -> Standardized {
    let m = features.nrows();
    let l = features.ncols();
    let m_f = m as f64;
    let mut out = features.clone();
    let mut means = vec![0.0; l];
    let mut scales = vec![1.0; l];
    let mut penalized = vec![true; l];
    let mut intercept_col = None;

    for j in 0..l {
        let col = features.column(j);
        let mean = col.sum() / m_f;
        let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / m_f;
        if var > 0.0 {
            let s = var.sqrt();
            means[j] = mean;
            scales[j] = s;
            for i in 0..m {
                out[(i, j)] = (features[(i, j)] - mean) / s;
            }
        } else if mean != 0.0 && intercept_col.is_none() {
            intercept_col = Some(j);
            penalized[j] = false;
        } else {
            // constant-zero or redundant constant column: force coef 0
            for i in 0..m {
                out[(i, j)] = 0.0;
            }
        }
    }
    Standardized {
        features: out,
        means,
        scales,
        intercept_col,
        penalized,
    }
}

/// Per-target-column LASSO over an explicit feature matrix. Targets must
/// have one column per state component.
pub fn lasso_fit(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SindyModel> {
    let start = Instant::now();
    if features.nrows() == 0 {
        return Err(Error::InsufficientData("LASSO needs at least one row".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config {
            key: "lambda".into(),
            message: format!("must be a finite nonnegative number, got {lambda}"),
        });
    }
    if targets.nrows() != features.nrows() || targets.ncols() != STATE_DIM {
        return Err(Error::InsufficientData(format!(
            "target matrix must be {} x {}, got {} x {}",
            features.nrows(),
            STATE_DIM,
            targets.nrows(),
            targets.ncols()
        )));
    }
    if features.iter().any(|v| !v.is_finite()) || targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LASSO design or target matrix".into()));
    }

    let std = standardize(features);
    let l = features.ncols();

    let solve_column = |col: usize| -> DVector<f64> {
        let target = targets.column(col).into_owned();
        let (beta_std, _) = lasso_coordinate_descent(
            &std.features,
            &target,
            lambda,
            max_iter,
            tol,
            Some(&std.penalized),
        );
        // undo the standardization so coefficients act on raw features
        let mut beta = DVector::<f64>::zeros(l);
        let mut mean_shift = 0.0;
        for j in 0..l {
            if std.scales[j] != 1.0 || std.means[j] != 0.0 {
                beta[j] = beta_std[j] / std.scales[j];
                mean_shift += beta[j] * std.means[j];
            } else if Some(j) != std.intercept_col {
                beta[j] = beta_std[j];
            }
        }
        if let Some(ic) = std.intercept_col {
            let c = features[(0, ic)];
            beta[ic] = (beta_std[ic] * c - mean_shift) / c;
        }
        beta
    };

    let columns = solve_all_columns(solve_column);

    let mut coefficients = DMatrix::<f64>::zeros(l, STATE_DIM);
    for (col, beta) in columns.into_iter().enumerate() {
        coefficients.set_column(col, &beta);
    }
    let near_zero = coefficients.iter().filter(|v| v.abs() < 1e-12).count();
    let sparsity = near_zero as f64 / (l * STATE_DIM) as f64;
    Ok(SindyModel {
        coefficients,
        lasso_lambda: lambda,
        fit_time: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        sparsity,
    })
}

#[cfg(feature = "parallel")]
fn solve_all_columns<F>(solve: F) -> Vec<DVector<f64>>
where
    F: Fn(usize) -> DVector<f64> + Sync + Send,
{
    use rayon::prelude::*;
    (0..STATE_DIM).into_par_iter().map(solve).collect()
}

#[cfg(not(feature = "parallel"))]
fn solve_all_columns<F>(solve: F) -> Vec<DVector<f64>>
where
    F: Fn(usize) -> DVector<f64> + Sync + Send,
{
    (0..STATE_DIM).map(solve).collect()
}

/// Fits a SINDy model on aligned snapshots: `states` has M+1 entries,
/// `inputs` M, and row m of the design is Theta(states[m], inputs[m])
/// with target states[m+1].
pub fn sindy_fit(
    states: &[GripperState],
    inputs: &[ControlInput],
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SindyModel> {
    let m = inputs.len();
    if m == 0 || states.len() != m + 1 {
        return Err(Error::InsufficientData(format!(
            "SINDy alignment: got {} states for {} inputs",
            states.len(),
            m
        )));
    }
    let mut features = DMatrix::<f64>::zeros(m, LIBRARY_DIM);
    let mut targets = DMatrix::<f64>::zeros(m, STATE_DIM);
    for row in 0..m {
        let theta = sindy_library(&states[row], &inputs[row]);
        features.row_mut(row).copy_from(&theta.transpose());
        targets
            .row_mut(row)
            .copy_from_slice(states[row + 1].as_slice());
    }
    lasso_fit(&features, &targets, lambda, max_iter, tol)
}

/// Fits a SINDy model across several independent trajectory segments;
/// design rows never straddle a segment seam.
pub fn sindy_fit_segments(
    segments: &[(Vec<GripperState>, Vec<ControlInput>)],
    lambda: f64,
    max_iter: usize,
    tol: f64,
) -> Result<SindyModel> {
    let mut rows = 0usize;
    for (seg_idx, (states, inputs)) in segments.iter().enumerate() {
        if states.len() != inputs.len() + 1 {
            return Err(Error::InsufficientData(format!(
                "segment {seg_idx}: got {} states for {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        rows += inputs.len();
    }
    if rows == 0 {
        return Err(Error::InsufficientData("SINDy needs at least one row".into()));
    }
    let mut features = DMatrix::<f64>::zeros(rows, LIBRARY_DIM);
    let mut targets = DMatrix::<f64>::zeros(rows, STATE_DIM);
    let mut row = 0usize;
    for (states, inputs) in segments {
        for m in 0..inputs.len() {
            let theta = sindy_library(&states[m], &inputs[m]);
            features.row_mut(row).copy_from(&theta.transpose());
            targets.row_mut(row).copy_from_slice(states[m + 1].as_slice());
            row += 1;
        }
    }
    lasso_fit(&features, &targets, lambda, max_iter, tol)
}

/// Next-state prediction: Xi^T Theta(xi, u).
pub fn sindy_predict(
    model: &SindyModel,
    state: &GripperState,
    input: &ControlInput,
) -> GripperState {
    let theta = sindy_library(state, input);
    let next = model.coefficients.tr_mul(&theta);
    let mut coords = [0.0; STATE_DIM];
    coords.copy_from_slice(next.as_slice());
    unflatten(coords)
}
