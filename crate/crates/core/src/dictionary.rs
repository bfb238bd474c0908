//! Lifting dictionaries: Hermite polynomial bases per scalar coordinate,
//! Kronecker composition across sub-workspaces and inputs, and the fixed
//! gripper dictionary built from the three representative bending
//! coordinates z1, z2, z3.
//!
//! The gripper dictionary keeps the 9 raw state components verbatim
//! (so state recovery is a fixed selection matrix), then the constant and
//! the z-products {z1z2, z1z3, z2z3, z1z2z3}, then the u1 and u2 blocks,
//! each the product of that input with [1, z1, z2, z3, z1z2, z1z3, z2z3,
//! z1z2z3]. That yields 30 terms. The construction this follows is
//! sometimes quoted with a 29-term count; the count here is what the
//! written composition produces after removing duplicates, and the term
//! order is fixed and documented via [`Dictionary::term_listing`].

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::types::{ControlInput, GripperState, INPUT_DIM, STATE_DIM};

/// Highest Hermite order the evaluator supports.
pub const MAX_HERMITE_ORDER: u32 = 16;

/// Largest dictionary the generic builder will compose.
const MAX_DICT_DIMENSION: usize = 4096;

/// Probabilists' Hermite polynomial He_n(x) via the three-term recurrence
/// He_{n+1}(x) = x He_n(x) - n He_{n-1}(x).
pub fn hermite_eval(order: u32, x: f64) -> Result<f64> {
    if order > MAX_HERMITE_ORDER {
        return Err(Error::UnsupportedOrder {
            order,
            max: MAX_HERMITE_ORDER,
        });
    }
    Ok(hermite_unchecked(order, x))
}

fn hermite_unchecked(order: u32, x: f64) -> f64 {
    match order {
        0 => 1.0,
        1 => x,
        _ => {
            let mut prev = 1.0;
            let mut cur = x;
            for n in 1..order {
                let next = x * cur - n as f64 * prev;
                prev = cur;
                cur = next;
            }
            cur
        }
    }
}

/// Hermite basis [He_0, ..., He_max_order] on one scalar coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HermiteBasis {
    pub max_order: u32,
}

impl HermiteBasis {
    pub fn new(max_order: u32) -> Result<Self> {
        if max_order > MAX_HERMITE_ORDER {
            return Err(Error::UnsupportedOrder {
                order: max_order,
                max: MAX_HERMITE_ORDER,
            });
        }
        Ok(Self { max_order })
    }

    /// Evaluates every order 0..=max_order at `x`.
    pub fn evaluate_all(&self, x: f64) -> Vec<f64> {
        (0..=self.max_order)
            .map(|n| hermite_unchecked(n, x))
            .collect()
    }
}

/// Kronecker product of two scalar vectors: `result[i*N + j] = a[i] * b[j]`.
pub fn kron_compose(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert!(!a.is_empty() && !b.is_empty(), "kron operands must be nonempty");
    let mut out = Vec::with_capacity(a.len() * b.len());
    for &ai in a {
        for &bj in b {
            out.push(ai * bj);
        }
    }
    out
}

/// A scalar variable a dictionary term can reference. Inputs sort before
/// states so rendered products read `u1*z1*z2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Input(usize),
    State(usize),
}

/// One lifting function: a product of Hermite factors He_order(var), one
/// factor per distinct variable. An empty product is the constant 1.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Term {
    factors: Vec<(Var, u32)>,
}

impl Term {
    pub fn constant() -> Self {
        Self { factors: Vec::new() }
    }

    pub fn linear(var: Var) -> Self {
        Self {
            factors: vec![(var, 1)],
        }
    }

    pub fn from_factors(mut factors: Vec<(Var, u32)>) -> Self {
        factors.retain(|&(_, order)| order > 0);
        factors.sort_by_key(|&(var, _)| var);
        for pair in factors.windows(2) {
            assert_ne!(pair[0].0, pair[1].0, "duplicate variable in term");
        }
        Self { factors }
    }

    /// Product of two terms over disjoint variable sets.
    fn multiply(&self, other: &Term) -> Term {
        let mut factors = self.factors.clone();
        factors.extend(other.factors.iter().copied());
        Term::from_factors(factors)
    }

    pub fn factors(&self) -> &[(Var, u32)] {
        &self.factors
    }

    pub fn is_constant(&self) -> bool {
        self.factors.is_empty()
    }

    /// True when this term is exactly He_1 of one state coordinate.
    fn is_raw_state(&self, coord: usize) -> bool {
        self.factors == [(Var::State(coord), 1)]
    }

    pub fn evaluate(&self, state: &[f64], input: &[f64]) -> f64 {
        let mut prod = 1.0;
        for &(var, order) in &self.factors {
            let x = match var {
                Var::State(i) => state[i],
                Var::Input(j) => input[j],
            };
            prod *= hermite_unchecked(order, x);
        }
        prod
    }

    fn render(&self, state_names: &[String], input_names: &[String]) -> String {
        if self.factors.is_empty() {
            return "1".to_string();
        }
        self.factors
            .iter()
            .map(|&(var, order)| {
                let name = match var {
                    Var::State(i) => &state_names[i],
                    Var::Input(j) => &input_names[j],
                };
                if order == 1 {
                    name.clone()
                } else {
                    format!("He{order}({name})")
                }
            })
            .collect::<Vec<_>>()
            .join("*")
    }

    fn parse(text: &str, state_names: &[String], input_names: &[String]) -> Result<Term> {
        let text = text.trim();
        if text == "1" {
            return Ok(Term::constant());
        }
        let mut factors = Vec::new();
        for piece in text.split('*') {
            let piece = piece.trim();
            let (order, name) = if let Some(rest) = piece.strip_prefix("He") {
                let open = rest.find('(').ok_or_else(|| {
                    Error::InvalidSpec(format!("malformed term factor {piece:?}"))
                })?;
                let order: u32 = rest[..open].parse().map_err(|_| {
                    Error::InvalidSpec(format!("malformed hermite order in {piece:?}"))
                })?;
                let name = rest[open + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::InvalidSpec(format!("malformed term factor {piece:?}")))?;
                (order, name)
            } else {
                (1, piece)
            };
            let var = if let Some(i) = state_names.iter().position(|n| n == name) {
                Var::State(i)
            } else if let Some(j) = input_names.iter().position(|n| n == name) {
                Var::Input(j)
            } else {
                return Err(Error::InvalidSpec(format!("unknown variable {name:?}")));
            };
            factors.push((var, order));
        }
        Ok(Term::from_factors(factors))
    }
}

/// Kronecker product of two term lists, same ordering as [`kron_compose`].
fn kron_terms(a: &[Term], b: &[Term]) -> Vec<Term> {
    let mut out = Vec::with_capacity(a.len() * b.len());
    for ta in a {
        for tb in b {
            out.push(ta.multiply(tb));
        }
    }
    out
}

/// Removes exact-duplicate term descriptors, keeping first occurrences.
fn dedup_terms(terms: Vec<Term>) -> Vec<Term> {
    let mut seen: Vec<Term> = Vec::with_capacity(terms.len());
    for t in terms {
        if !seen.contains(&t) {
            seen.push(t);
        }
    }
    seen
}

/// An ordered, duplicate-free set of lifting functions over the state and
/// input variables, with the raw state components recoverable at
/// `state_indices`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    terms: Vec<Term>,
    state_dim: usize,
    input_dim: usize,
    state_names: Vec<String>,
    input_names: Vec<String>,
    state_indices: Vec<usize>,
}

impl Dictionary {
    /// The canonical gripper dictionary over the nine tip coordinates and
    /// the two PWM channels; z1, z2, z3 are the representative bending
    /// coordinates (flat indices 2, 5, 8). Dimension 30.
    pub fn gripper() -> Dictionary {
        let state_names = ["x1", "y1", "z1", "x2", "y2", "z2", "x3", "y3", "z3"]
            .map(String::from)
            .to_vec();
        let input_names = ["u1", "u2"].map(String::from).to_vec();
        const Z_COORDS: [usize; 3] = [2, 5, 8];
        let z = Z_COORDS.map(Var::State);

        // D_xi = [1, z1, z2, z3, z1z2, z1z3, z2z3, z1z2z3]
        let d_xi: Vec<Term> = vec![
            Term::constant(),
            Term::linear(z[0]),
            Term::linear(z[1]),
            Term::linear(z[2]),
            Term::from_factors(vec![(z[0], 1), (z[1], 1)]),
            Term::from_factors(vec![(z[0], 1), (z[2], 1)]),
            Term::from_factors(vec![(z[1], 1), (z[2], 1)]),
            Term::from_factors(vec![(z[0], 1), (z[1], 1), (z[2], 1)]),
        ];

        let mut terms: Vec<Term> = (0..STATE_DIM).map(|i| Term::linear(Var::State(i))).collect();
        // D_xi with its singleton z terms dropped: they duplicate raw states.
        for t in &d_xi {
            if !Z_COORDS.iter().any(|&i| t.is_raw_state(i)) {
                terms.push(t.clone());
            }
        }
        // kron([u1, u2], D_xi): the u1 block then the u2 block.
        let u_terms = [Term::linear(Var::Input(0)), Term::linear(Var::Input(1))];
        terms.extend(kron_terms(&u_terms, &d_xi));

        let deduped = dedup_terms(terms);
        let state_indices = (0..STATE_DIM).collect();
        Dictionary {
            terms: deduped,
            state_dim: STATE_DIM,
            input_dim: INPUT_DIM,
            state_names,
            input_names,
            state_indices,
        }
    }

    /// Identity dictionary: just the raw state components, optionally
    /// followed by the raw inputs. Useful for linear plants and tests.
    pub fn linear(state_dim: usize, input_dim: usize) -> Dictionary {
        assert!(state_dim > 0);
        let mut terms: Vec<Term> = (0..state_dim).map(|i| Term::linear(Var::State(i))).collect();
        terms.extend((0..input_dim).map(|j| Term::linear(Var::Input(j))));
        Dictionary {
            terms,
            state_dim,
            input_dim,
            state_names: default_state_names(state_dim),
            input_names: default_input_names(input_dim),
            state_indices: (0..state_dim).collect(),
        }
    }

    /// Generic composition: a Hermite basis of the given order per scalar
    /// coordinate, Kronecker product across coordinates, then the Kronecker
    /// product with the input lifting built from zero- and first-order
    /// Hermite polynomials per channel. Duplicate terms are removed.
    pub fn generic(space_spec: &[u32], input_dim: usize) -> Result<Dictionary> {
        if space_spec.is_empty() {
            return Err(Error::InvalidSpec("at least one coordinate required".into()));
        }
        let mut dim_bound: usize = 1;
        for (i, &order) in space_spec.iter().enumerate() {
            if order == 0 {
                return Err(Error::InvalidSpec(format!(
                    "coordinate {i} must have basis order >= 1 so the raw state stays recoverable"
                )));
            }
            if order > MAX_HERMITE_ORDER {
                return Err(Error::UnsupportedOrder {
                    order,
                    max: MAX_HERMITE_ORDER,
                });
            }
            dim_bound = dim_bound.saturating_mul(order as usize + 1);
        }
        dim_bound = dim_bound.saturating_mul(1usize << input_dim.min(32));
        if dim_bound > MAX_DICT_DIMENSION {
            return Err(Error::InvalidSpec(format!(
                "composed dictionary would have up to {dim_bound} terms (limit {MAX_DICT_DIMENSION})"
            )));
        }

        let mut state_terms = vec![Term::constant()];
        for (i, &order) in space_spec.iter().enumerate() {
            let basis: Vec<Term> = (0..=order)
                .map(|n| Term::from_factors(vec![(Var::State(i), n)]))
                .collect();
            state_terms = kron_terms(&state_terms, &basis);
        }
        let mut input_terms = vec![Term::constant()];
        for j in 0..input_dim {
            let basis = vec![Term::constant(), Term::linear(Var::Input(j))];
            input_terms = kron_terms(&input_terms, &basis);
        }
        let terms = dedup_terms(kron_terms(&input_terms, &state_terms));

        let state_dim = space_spec.len();
        let mut state_indices = Vec::with_capacity(state_dim);
        for i in 0..state_dim {
            let idx = terms
                .iter()
                .position(|t| t.is_raw_state(i))
                .expect("order >= 1 per coordinate keeps every raw state present");
            state_indices.push(idx);
        }
        Ok(Dictionary {
            terms,
            state_dim,
            input_dim,
            state_names: default_state_names(state_dim),
            input_names: default_input_names(input_dim),
            state_indices,
        })
    }

    pub fn dimension(&self) -> usize {
        self.terms.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    /// Positions of the raw state components within the lifted vector.
    pub fn state_indices(&self) -> &[usize] {
        &self.state_indices
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// Lifts a raw (state, input) pair; slices must match the declared dims.
    pub fn evaluate_raw(&self, state: &[f64], input: &[f64]) -> DVector<f64> {
        assert_eq!(state.len(), self.state_dim, "state dimension mismatch");
        assert!(input.len() >= self.input_dim, "input dimension mismatch");
        DVector::from_iterator(
            self.terms.len(),
            self.terms.iter().map(|t| t.evaluate(state, input)),
        )
    }

    /// Lifts a gripper (state, input) pair into the N-vector Psi(xi, u).
    pub fn evaluate(&self, state: &GripperState, input: &ControlInput) -> DVector<f64> {
        self.evaluate_raw(state.as_slice(), input.as_slice())
    }

    /// Human-readable listing, one term per line, in evaluation order.
    pub fn term_listing(&self) -> String {
        self.terms
            .iter()
            .map(|t| t.render(&self.state_names, &self.input_names))
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Rebuilds a dictionary from [`Dictionary::term_listing`] output.
    pub fn from_listing(
        listing: &str,
        state_names: Vec<String>,
        input_names: Vec<String>,
    ) -> Result<Dictionary> {
        let terms: Vec<Term> = listing
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Term::parse(l, &state_names, &input_names))
            .collect::<Result<_>>()?;
        if terms.is_empty() {
            return Err(Error::InvalidSpec("empty term listing".into()));
        }
        let state_dim = state_names.len();
        let mut state_indices = Vec::with_capacity(state_dim);
        for i in 0..state_dim {
            let idx = terms.iter().position(|t| t.is_raw_state(i)).ok_or_else(|| {
                Error::InvalidSpec(format!("raw state component {i} missing from listing"))
            })?;
            state_indices.push(idx);
        }
        Ok(Dictionary {
            terms,
            state_dim,
            input_dim: input_names.len(),
            state_names,
            input_names,
            state_indices,
        })
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }
}

/// Builds the canonical 30-term gripper dictionary.
pub fn build_gripper_dictionary() -> Dictionary {
    Dictionary::gripper()
}

/// Builds the generic Hermite/Kronecker dictionary for arbitrary spaces.
pub fn build_generic_dictionary(space_spec: &[u32], input_dim: usize) -> Result<Dictionary> {
    Dictionary::generic(space_spec, input_dim)
}

fn default_state_names(state_dim: usize) -> Vec<String> {
    if state_dim == 1 {
        vec!["z".to_string()]
    } else {
        (0..state_dim).map(|i| format!("z{}", i + 1)).collect()
    }
}

fn default_input_names(input_dim: usize) -> Vec<String> {
    if input_dim == 1 {
        vec!["u".to_string()]
    } else {
        (0..input_dim).map(|j| format!("u{}", j + 1)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn hermite_low_orders() {
        assert_eq!(hermite_eval(0, 7.3).unwrap(), 1.0);
        assert_eq!(hermite_eval(1, -2.5).unwrap(), -2.5);
        // He_2(x) = x^2 - 1
        assert_eq!(hermite_eval(2, 2.0).unwrap(), 3.0);
    }

    #[test]
    fn hermite_order_beyond_max_errors() {
        let err = hermite_eval(MAX_HERMITE_ORDER + 1, 0.0).unwrap_err();
        assert!(matches!(err, Error::UnsupportedOrder { .. }));
    }

    proptest! {
        #[test]
        fn hermite_recurrence_holds(n in 1u32..6, x in -10.0f64..10.0) {
            let lhs = hermite_unchecked(n + 1, x) - x * hermite_unchecked(n, x)
                + n as f64 * hermite_unchecked(n - 1, x);
            prop_assert!(lhs.abs() <= 1e-12 * hermite_unchecked(n + 1, x).abs().max(1.0));
        }

        #[test]
        fn kron_matches_definition(a in proptest::collection::vec(-5.0f64..5.0, 1..6),
                                   b in proptest::collection::vec(-5.0f64..5.0, 1..6)) {
            let k = kron_compose(&a, &b);
            prop_assert_eq!(k.len(), a.len() * b.len());
            for i in 0..a.len() {
                for j in 0..b.len() {
                    prop_assert_eq!(k[i * b.len() + j], a[i] * b[j]);
                }
            }
        }

        #[test]
        fn gripper_state_indices_select_state(coords in proptest::array::uniform9(-1.0f64..1.0),
                                              u1 in 0.2f64..0.35, u2 in 0.2f64..0.35) {
            let dict = Dictionary::gripper();
            let state = GripperState::new(coords);
            let lifted = dict.evaluate(&state, &ControlInput::new(u1, u2));
            for (i, &idx) in dict.state_indices().iter().enumerate() {
                prop_assert_eq!(lifted[idx], coords[i]);
            }
        }
    }

    #[test]
    fn kron_examples() {
        assert_eq!(kron_compose(&[1.0, 2.0], &[3.0, 4.0]), vec![3.0, 4.0, 6.0, 8.0]);
        let v = vec![2.0, -1.0, 0.5];
        assert_eq!(kron_compose(&[1.0], &v), v);
        let (a, b, c) = (2.0, 3.0, 5.0);
        let chained = kron_compose(&kron_compose(&[1.0, a], &[1.0, b]), &[1.0, c]);
        assert_eq!(chained, vec![1.0, c, b, b * c, a, a * c, a * b, a * b * c]);
    }

    #[test]
    fn gripper_dictionary_has_30_terms() {
        let dict = Dictionary::gripper();
        assert_eq!(dict.dimension(), 30);
        assert_eq!(dict.state_indices(), &[0, 1, 2, 3, 4, 5, 6, 7, 8]);
    }

    #[test]
    fn gripper_dictionary_at_zero_state() {
        let dict = Dictionary::gripper();
        let lifted = dict.evaluate(&GripperState::zero(), &ControlInput::new(0.2, 0.2));
        // raw states and z-products vanish, constant is 1, the u-constant
        // terms carry the duty cycles, every other input term vanishes.
        for i in 0..9 {
            assert_eq!(lifted[i], 0.0);
        }
        assert_eq!(lifted[9], 1.0);
        for i in 10..14 {
            assert_eq!(lifted[i], 0.0);
        }
        assert_eq!(lifted[14], 0.2);
        assert!(lifted.iter().skip(15).take(7).all(|&v| v == 0.0));
        assert_eq!(lifted[22], 0.2);
        assert!(lifted.iter().skip(23).all(|&v| v == 0.0));
    }

    #[test]
    fn evaluate_at_origin_is_constant_indicator() {
        let dict = Dictionary::gripper();
        let lifted = dict.evaluate(&GripperState::zero(), &ControlInput::zero());
        for (i, &v) in lifted.iter().enumerate() {
            assert_eq!(v, if i == 9 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn scalar_toy_dictionary_matches_hand_evaluation() {
        // [1, z, He_2(z)] at z = 2 -> [1, 2, 3]
        let dict = Dictionary::generic(&[2], 0).unwrap();
        let lifted = dict.evaluate_raw(&[2.0], &[]);
        assert_eq!(lifted.as_slice(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn generic_smallest_cases() {
        let d = Dictionary::generic(&[1], 0).unwrap();
        assert_eq!(d.dimension(), 2);
        assert_eq!(d.term_listing(), "1\nz");

        let d2 = Dictionary::generic(&[1, 1], 0).unwrap();
        assert_eq!(d2.dimension(), 4);
        assert_eq!(d2.term_listing(), "1\nz2\nz1\nz1*z2");

        let d3 = Dictionary::generic(&[1], 1).unwrap();
        assert_eq!(d3.dimension(), 4);
        assert_eq!(d3.term_listing(), "1\nz\nu\nu*z");
    }

    #[test]
    fn generic_rejects_empty_spec() {
        assert!(matches!(
            Dictionary::generic(&[], 0),
            Err(Error::InvalidSpec(_))
        ));
    }

    #[test]
    fn gripper_terms_are_multilinear() {
        let dict = Dictionary::gripper();
        for term in dict.terms() {
            for &(_, order) in term.factors() {
                assert_eq!(order, 1);
            }
        }
        // one z varied while the rest stay fixed gives an affine slice
        let u = ControlInput::new(0.3, 0.25);
        let base: [f64; 9] = [0.1, -0.2, 0.4, 0.0, 0.3, -0.5, 0.2, 0.1, 0.6];
        let probe = |z1: f64| {
            let mut c = base;
            c[2] = z1;
            dict.evaluate(&GripperState::new(c), &u)
        };
        let (f0, f1, f2) = (probe(0.0), probe(1.0), probe(2.0));
        for k in 0..dict.dimension() {
            assert_abs_diff_eq!(f2[k] - f1[k], f1[k] - f0[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn dedup_preserves_raw_states() {
        let dict = Dictionary::gripper();
        for (i, &idx) in dict.state_indices().iter().enumerate() {
            assert!(dict.terms()[idx].is_raw_state(i));
        }
    }

    #[test]
    fn gripper_term_listing_is_stable() {
        let expected = "\
x1\ny1\nz1\nx2\ny2\nz2\nx3\ny3\nz3\n1\nz1*z2\nz1*z3\nz2*z3\nz1*z2*z3\n\
u1\nu1*z1\nu1*z2\nu1*z3\nu1*z1*z2\nu1*z1*z3\nu1*z2*z3\nu1*z1*z2*z3\n\
u2\nu2*z1\nu2*z2\nu2*z3\nu2*z1*z2\nu2*z1*z3\nu2*z2*z3\nu2*z1*z2*z3";
        assert_eq!(Dictionary::gripper().term_listing(), expected);
    }

    #[test]
    fn listing_round_trips() {
        let dict = Dictionary::gripper();
        let back = Dictionary::from_listing(
            &dict.term_listing(),
            dict.state_names().to_vec(),
            dict.input_names().to_vec(),
        )
        .unwrap();
        assert_eq!(back, dict);

        let toy = Dictionary::generic(&[3], 1).unwrap();
        let back = Dictionary::from_listing(
            &toy.term_listing(),
            toy.state_names().to_vec(),
            toy.input_names().to_vec(),
        )
        .unwrap();
        assert_eq!(back, toy);
    }

    #[test]
    fn symbolic_kron_agrees_with_value_kron() {
        // evaluating a composed dictionary equals composing evaluations
        let d = Dictionary::generic(&[2, 1], 1).unwrap();
        let state = [0.7, -1.3];
        let input = [0.4];
        let lifted = d.evaluate_raw(&state, &input);

        let b0 = HermiteBasis::new(2).unwrap().evaluate_all(state[0]);
        let b1 = HermiteBasis::new(1).unwrap().evaluate_all(state[1]);
        let states = kron_compose(&b0, &b1);
        let inputs = kron_compose(&[1.0], &[1.0, input[0]]);
        let full = kron_compose(&inputs, &states);
        // generic() dedups but this composition has no duplicates
        assert_eq!(lifted.as_slice(), full.as_slice());
    }
}
