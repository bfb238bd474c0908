//! Finite-dimensional Koopman operator estimation from snapshot pairs.
//!
//! The lifted convention is row-major: a lifted snapshot is a row vector
//! Psi and advances by right-multiplication, Psi_{t+1} ~ Psi_t K. The
//! operator is the least-squares solution K = G^+ A with
//! G = (1/M) sum Psi_m^T Psi_m and A = (1/M) sum Psi_m^T Psi_{m+1},
//! where G^+ is a truncated-SVD pseudoinverse. The successor lifting
//! Psi_{m+1} reuses the input u_m, so K never depends on an unknown
//! future input.
//!
//! State recovery goes through the selection matrix B (one unit entry per
//! column, at the dictionary's raw-state slots), so a one-step prediction
//! is B^T K^T Psi(state, input). The spectral path (eigenvalues lambda_n,
//! eigenfunction coefficients eta_n, scaled left eigenvectors w_n, modes
//! v_n = B^T w_n) reproduces the same prediction as
//! sum_n v_n lambda_n (Psi eta_n) and is kept as an independent route.

use std::time::Instant;

use nalgebra::{Complex, DMatrix, DVector};

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};
use crate::types::{unflatten, ControlInput, GripperState, STATE_DIM};

/// Relative singular-value cutoff used when no explicit tolerance is given.
/// Online windows are far smaller than the lifted dimension, so G is rank
/// deficient and truncation is mandatory; the cutoff must also discard the
/// noise-born singular directions of small windows, whose tiny singular
/// values otherwise amplify novel inputs into prediction spikes.
pub const DEFAULT_SVD_TOL: f64 = 1e-6;

/// Estimated lifted-space transition matrix plus everything needed to
/// lift, advance and read back states.
#[derive(Debug, Clone)]
pub struct KoopmanModel {
    k: DMatrix<f64>,
    dict: Dictionary,
    b: DMatrix<f64>,
    fit_time: f64,
    snapshot_count: usize,
}

impl KoopmanModel {
    /// Wraps an explicit transition matrix; used by tests and benchmarks
    /// that need a model without running a fit.
    pub fn from_parts(dict: Dictionary, k: DMatrix<f64>) -> Self {
        let n = dict.dimension();
        assert_eq!(k.nrows(), n);
        assert_eq!(k.ncols(), n);
        let b = selection_matrix(&dict);
        Self {
            k,
            dict,
            b,
            fit_time: f64::MIN_POSITIVE,
            snapshot_count: 1,
        }
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    /// State-recovery selection matrix, N x state_dim.
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// Wall-clock seconds the fit took; always positive.
    pub fn fit_time(&self) -> f64 {
        self.fit_time
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshot_count
    }

    pub fn dimension(&self) -> usize {
        self.dict.dimension()
    }

    /// Serializes to a flat text format: dimension headers plus row-major
    /// matrix values, with the dictionary listing embedded.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str("softkoop koopman model v1\n");
        out.push_str(&format!("state_dim {}\n", self.dict.state_dim()));
        out.push_str(&format!("input_dim {}\n", self.dict.input_dim()));
        out.push_str(&format!("states {}\n", self.dict.state_names().join(" ")));
        out.push_str(&format!("inputs {}\n", self.dict.input_names().join(" ")));
        out.push_str(&format!("terms {}\n", self.dict.dimension()));
        out.push_str(&self.dict.term_listing());
        out.push('\n');
        push_matrix(&mut out, "K", &self.k);
        push_matrix(&mut out, "B", &self.b);
        out.push_str(&format!("fit_time {}\n", self.fit_time));
        out.push_str(&format!("snapshots {}\n", self.snapshot_count));
        out
    }

    /// Parses the [`KoopmanModel::to_text`] format.
    pub fn from_text(text: &str) -> Result<KoopmanModel> {
        let mut lines = text.lines();
        let bad = |msg: &str| Error::InvalidSpec(format!("koopman model text: {msg}"));
        let header = lines.next().ok_or_else(|| bad("empty input"))?;
        if header.trim() != "softkoop koopman model v1" {
            return Err(bad("unrecognized header"));
        }
        let state_dim: usize = parse_kv(lines.next(), "state_dim")?;
        let input_dim: usize = parse_kv(lines.next(), "input_dim")?;
        let state_names = parse_names(lines.next(), "states", state_dim)?;
        let input_names = parse_names(lines.next(), "inputs", input_dim)?;
        let n_terms: usize = parse_kv(lines.next(), "terms")?;
        let mut listing = String::new();
        for _ in 0..n_terms {
            let line = lines.next().ok_or_else(|| bad("truncated term listing"))?;
            listing.push_str(line);
            listing.push('\n');
        }
        let dict = Dictionary::from_listing(&listing, state_names, input_names)?;
        if dict.dimension() != n_terms {
            return Err(bad("term count mismatch"));
        }
        let k = parse_matrix(&mut lines, "K")?;
        let b = parse_matrix(&mut lines, "B")?;
        if k.nrows() != n_terms || k.ncols() != n_terms || b.nrows() != n_terms || b.ncols() != state_dim
        {
            return Err(bad("matrix dimensions inconsistent with dictionary"));
        }
        let fit_time: f64 = parse_kv(lines.next(), "fit_time")?;
        let snapshot_count: usize = parse_kv(lines.next(), "snapshots")?;
        Ok(KoopmanModel {
            k,
            dict,
            b,
            fit_time,
            snapshot_count,
        })
    }
}

fn push_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    out.push_str(&format!("{name} {} {}\n", m.nrows(), m.ncols()));
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
}

fn parse_kv<T: std::str::FromStr>(line: Option<&str>, key: &str) -> Result<T> {
    let line = line.ok_or_else(|| Error::InvalidSpec(format!("missing {key} line")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::InvalidSpec(format!("expected {key} line, got {line:?}")))?;
    rest.trim()
        .parse()
        .map_err(|_| Error::InvalidSpec(format!("unparseable {key} value in {line:?}")))
}

fn parse_names(line: Option<&str>, key: &str, expect: usize) -> Result<Vec<String>> {
    let line = line.ok_or_else(|| Error::InvalidSpec(format!("missing {key} line")))?;
    let rest = line
        .strip_prefix(key)
        .ok_or_else(|| Error::InvalidSpec(format!("expected {key} line, got {line:?}")))?;
    let names: Vec<String> = rest.split_whitespace().map(String::from).collect();
    if names.len() != expect {
        return Err(Error::InvalidSpec(format!(
            "{key} lists {} names, expected {expect}",
            names.len()
        )));
    }
    Ok(names)
}

fn parse_matrix<'a, I: Iterator<Item = &'a str>>(lines: &mut I, name: &str) -> Result<DMatrix<f64>> {
    let bad = |msg: String| Error::InvalidSpec(msg);
    let header = lines
        .next()
        .ok_or_else(|| bad(format!("missing {name} header")))?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(name) {
        return Err(bad(format!("expected {name} header, got {header:?}")));
    }
    let rows: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad {name} row count")))?;
    let cols: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad(format!("bad {name} column count")))?;
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let line = lines
            .next()
            .ok_or_else(|| bad(format!("{name} truncated at row {r}")))?;
        for v in line.split_whitespace() {
            let x: f64 = v
                .parse()
                .map_err(|_| bad(format!("{name} row {r}: unparseable value {v:?}")))?;
            data.push(x);
        }
        if data.len() != (r + 1) * cols {
            return Err(bad(format!("{name} row {r} has wrong length")));
        }
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

/// Builds the N x state_dim selection matrix with a unit entry per column
/// at the dictionary's raw-state slots.
fn selection_matrix(dict: &Dictionary) -> DMatrix<f64> {
    let mut b = DMatrix::zeros(dict.dimension(), dict.state_dim());
    for (col, &row) in dict.state_indices().iter().enumerate() {
        b[(row, col)] = 1.0;
    }
    b
}

/// Moore-Penrose pseudoinverse with singular values below `tol * sigma_max`
/// treated as zero. A zero matrix pseudoinverts to a zero matrix.
pub fn pinv_truncated(m: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd with u requested");
    let v_t = svd.v_t.expect("svd with v_t requested");
    let sigma_max = svd.singular_values.iter().cloned().fold(0.0f64, f64::max);
    if sigma_max == 0.0 {
        return DMatrix::zeros(cols, rows);
    }
    let cutoff = tol * sigma_max;
    let rank = svd.singular_values.len();
    let mut sigma_inv = DMatrix::zeros(rank, rank);
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s >= cutoff && s > 0.0 {
            sigma_inv[(i, i)] = 1.0 / s;
        }
    }
    v_t.transpose() * sigma_inv * u.transpose()
}

/// EDMD over raw snapshot slices; `states` has M+1 entries, `inputs` M,
/// aligned so `inputs[m]` drives `states[m] -> states[m+1]`.
pub fn fit_edmd_snapshots(
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    dict: &Dictionary,
    svd_tol: f64,
) -> Result<KoopmanModel> {
    let start = Instant::now();
    let m_count = inputs.len();
    if m_count == 0 || states.len() < 2 {
        return Err(Error::InsufficientData(
            "EDMD needs at least one snapshot pair".into(),
        ));
    }
    if states.len() != m_count + 1 {
        return Err(Error::InsufficientData(format!(
            "EDMD alignment: got {} states for {} inputs, expected {}",
            states.len(),
            m_count,
            m_count + 1
        )));
    }
    let n = dict.dimension();
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut a = DMatrix::<f64>::zeros(n, n);
    for m in 0..m_count {
        let psi = dict.evaluate_raw(states[m].as_slice(), inputs[m].as_slice());
        // successor lifting reuses the driving input u_m
        let psi_next = dict.evaluate_raw(states[m + 1].as_slice(), inputs[m].as_slice());
        if psi.iter().any(|v| !v.is_finite()) || psi_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("lifted snapshot pair {m}")));
        }
        g.ger(1.0, &psi, &psi, 1.0);
        a.ger(1.0, &psi, &psi_next, 1.0);
    }
    let scale = 1.0 / m_count as f64;
    g.scale_mut(scale);
    a.scale_mut(scale);

    let k = pinv_truncated(&g, svd_tol) * a;
    let b = selection_matrix(dict);
    let fit_time = start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
    Ok(KoopmanModel {
        k,
        dict: dict.clone(),
        b,
        fit_time,
        snapshot_count: m_count,
    })
}

/// EDMD over gripper snapshots.
pub fn fit_edmd(
    states: &[GripperState],
    inputs: &[ControlInput],
    dict: &Dictionary,
    svd_tol: f64,
) -> Result<KoopmanModel> {
    let raw_states: Vec<DVector<f64>> = states
        .iter()
        .map(|s| DVector::from_column_slice(s.as_slice()))
        .collect();
    let raw_inputs: Vec<DVector<f64>> = inputs
        .iter()
        .map(|u| DVector::from_column_slice(u.as_slice()))
        .collect();
    fit_edmd_snapshots(&raw_states, &raw_inputs, dict, svd_tol)
}

/// EDMD over several independent trajectory segments: snapshot pairs are
/// accumulated within each segment only, never across the seams.
pub fn fit_edmd_segments(
    segments: &[(Vec<GripperState>, Vec<ControlInput>)],
    dict: &Dictionary,
    svd_tol: f64,
) -> Result<KoopmanModel> {
    let start = Instant::now();
    let n = dict.dimension();
    let mut g = DMatrix::<f64>::zeros(n, n);
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut m_total = 0usize;
    for (seg_idx, (states, inputs)) in segments.iter().enumerate() {
        if states.len() != inputs.len() + 1 {
            return Err(Error::InsufficientData(format!(
                "segment {seg_idx}: got {} states for {} inputs",
                states.len(),
                inputs.len()
            )));
        }
        for m in 0..inputs.len() {
            let psi = dict.evaluate(&states[m], &inputs[m]);
            let psi_next = dict.evaluate(&states[m + 1], &inputs[m]);
            if psi.iter().any(|v| !v.is_finite()) || psi_next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("segment {seg_idx} pair {m}")));
            }
            g.ger(1.0, &psi, &psi, 1.0);
            a.ger(1.0, &psi, &psi_next, 1.0);
            m_total += 1;
        }
    }
    if m_total == 0 {
        return Err(Error::InsufficientData(
            "EDMD needs at least one snapshot pair".into(),
        ));
    }
    let scale = 1.0 / m_total as f64;
    g.scale_mut(scale);
    a.scale_mut(scale);
    let k = pinv_truncated(&g, svd_tol) * a;
    let b = selection_matrix(dict);
    Ok(KoopmanModel {
        k,
        dict: dict.clone(),
        b,
        fit_time: start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE),
        snapshot_count: m_total,
    })
}

/// One-step prediction over raw slices: lift, advance, read out state rows.
pub fn predict_next_raw(model: &KoopmanModel, state: &[f64], input: &[f64]) -> DVector<f64> {
    let psi = model.dict.evaluate_raw(state, input);
    let advanced = model.k.tr_mul(&psi);
    model.b.tr_mul(&advanced)
}

/// One-step prediction for gripper states.
pub fn predict_one_step(
    model: &KoopmanModel,
    state: &GripperState,
    input: &ControlInput,
) -> GripperState {
    let next = predict_next_raw(model, state.as_slice(), input.as_slice());
    let mut coords = [0.0; STATE_DIM];
    coords.copy_from_slice(next.as_slice());
    unflatten(coords)
}

/// Iterated one-step predictions, re-lifting from each predicted state
/// with that step's input.
pub fn predict_rollout(
    model: &KoopmanModel,
    state: &GripperState,
    inputs: &[ControlInput],
) -> Vec<GripperState> {
    assert!(!inputs.is_empty(), "rollout horizon must be at least 1");
    let mut out = Vec::with_capacity(inputs.len());
    let mut cur = *state;
    for u in inputs {
        cur = predict_one_step(model, &cur, u);
        out.push(cur);
    }
    out
}

/// Spectral view of a fitted operator: eigenvalues, eigenfunction
/// coefficients eta_n, left eigenvectors w_n scaled so w_n^T eta_n = 1,
/// and state-space modes v_n = B^T w_n.
#[derive(Debug, Clone)]
pub struct KoopmanDecomposition {
    pub eigenvalues: Vec<Complex<f64>>,
    pub eigenfunctions: Vec<DVector<Complex<f64>>>,
    pub left_eigenvectors: Vec<DVector<Complex<f64>>>,
    pub modes: Vec<DVector<Complex<f64>>>,
}

impl KoopmanDecomposition {
    /// Mode-sum prediction from an already-lifted snapshot: the real part
    /// of sum_n v_n lambda_n (psi . eta_n). Never touches K.
    pub fn mode_sum_step(&self, psi: &DVector<f64>) -> DVector<f64> {
        let state_dim = self.modes[0].len();
        let mut acc = DVector::<Complex<f64>>::zeros(state_dim);
        for (n, mode) in self.modes.iter().enumerate() {
            let phi: Complex<f64> = psi
                .iter()
                .zip(self.eigenfunctions[n].iter())
                .map(|(&p, &e)| e * p)
                .sum();
            let weight = self.eigenvalues[n] * phi;
            acc.zip_apply(mode, |a, m| *a += m * weight);
        }
        acc.map(|c| c.re)
    }
}

/// Eigendecomposition of K with the left eigenvectors scaled so
/// w_n^T eta_n = 1. Non-diagonalizable operators (within tolerance) yield
/// a decomposition-unavailable error carrying the worst residual.
pub fn decompose(model: &KoopmanModel) -> Result<KoopmanDecomposition> {
    let k = &model.k;
    let n = k.nrows();
    let k_norm = k.norm().max(1.0);
    let eigs = k.complex_eigenvalues();

    // sort for a deterministic output order, then cluster nearby values so
    // repeated eigenvalues get their full eigenspace from one nullspace
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        (eigs[j].re, eigs[j].im)
            .partial_cmp(&(eigs[i].re, eigs[i].im))
            .expect("eigenvalues are finite")
    });
    let sorted: Vec<Complex<f64>> = order.iter().map(|&i| eigs[i]).collect();

    let cluster_tol = 1e-8 * k_norm;
    let kc: DMatrix<Complex<f64>> = k.map(|v| Complex::new(v, 0.0));
    let mut eigenvalues = Vec::with_capacity(n);
    let mut v = DMatrix::<Complex<f64>>::zeros(n, n);
    let mut col = 0usize;
    let mut start = 0usize;
    while start < n {
        let mut end = start + 1;
        while end < n && (sorted[end] - sorted[start]).norm() <= cluster_tol {
            end += 1;
        }
        let multiplicity = end - start;
        let lambda = sorted[start..end]
            .iter()
            .sum::<Complex<f64>>()
            .unscale(multiplicity as f64);

        let shifted = &kc - DMatrix::<Complex<f64>>::identity(n, n) * lambda;
        let svd = shifted.svd(true, true);
        let v_t = svd.v_t.expect("svd with v_t requested");
        // smallest singular values come last; their right singular vectors
        // span the (approximate) eigenspace
        for m in 0..multiplicity {
            let row = v_t.row(n - 1 - m);
            for (i, val) in row.iter().enumerate() {
                v[(i, col)] = val.conj();
            }
            eigenvalues.push(lambda);
            col += 1;
        }
        start = end;
    }

    // per-pair residual check catches defective clusters
    let mut worst = 0.0f64;
    for (idx, lambda) in eigenvalues.iter().enumerate() {
        let eta = v.column(idx);
        let residual = (&kc * eta - eta * *lambda).norm() / k_norm;
        worst = worst.max(residual);
    }
    if worst > 1e-8 {
        return Err(Error::DecompositionUnavailable { residual: worst });
    }

    let v_inv = v
        .clone()
        .try_inverse()
        .ok_or(Error::DecompositionUnavailable { residual: worst })?;

    let bc: DMatrix<Complex<f64>> = model.b.map(|x| Complex::new(x, 0.0));
    let mut eigenfunctions = Vec::with_capacity(n);
    let mut left = Vec::with_capacity(n);
    let mut modes = Vec::with_capacity(n);
    for idx in 0..n {
        let eta: DVector<Complex<f64>> = v.column(idx).into_owned();
        let w: DVector<Complex<f64>> = v_inv.row(idx).transpose();
        let mode = bc.tr_mul(&w);
        eigenfunctions.push(eta);
        left.push(w);
        modes.push(mode);
    }
    Ok(KoopmanDecomposition {
        eigenvalues,
        eigenfunctions,
        left_eigenvectors: left,
        modes,
    })
}

/// Mode-sum prediction for gripper states, the Eq.-style spectral route.
pub fn predict_one_step_mode_sum(
    decomp: &KoopmanDecomposition,
    dict: &Dictionary,
    state: &GripperState,
    input: &ControlInput,
) -> GripperState {
    let psi = dict.evaluate(state, input);
    let next = decomp.mode_sum_step(&psi);
    let mut coords = [0.0; STATE_DIM];
    coords.copy_from_slice(next.as_slice());
    unflatten(coords)
}
