//! Domain types shared by every module: gripper state, control input,
//! snapshot window, reference trajectories and seeded randomness.
//!
//! The canonical flattened state ordering is `x1,y1,z1,x2,y2,z2,x3,y3,z3`
//! (meters, inertial frame at the geometric center of the attachment
//! plate). PWM duty cycles are fractions in [0, 1].

use std::collections::VecDeque;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Flattened gripper state dimension: 3 fingertips times (x, y, z).
pub const STATE_DIM: usize = 9;
/// Control channels: board 1 drives fingers 1 and 3, board 2 drives finger 2.
pub const INPUT_DIM: usize = 2;

/// Fingertip positions of the three soft fingers, flattened in canonical
/// order `x1,y1,z1,x2,y2,z2,x3,y3,z3` (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperState {
    coords: [f64; STATE_DIM],
}

impl GripperState {
    pub fn new(coords: [f64; STATE_DIM]) -> Self {
        Self { coords }
    }

    pub fn zero() -> Self {
        Self {
            coords: [0.0; STATE_DIM],
        }
    }

    /// Builds a state from per-finger `(x, y, z)` tip positions.
    pub fn from_tips(tips: [[f64; 3]; 3]) -> Self {
        let mut coords = [0.0; STATE_DIM];
        for (i, tip) in tips.iter().enumerate() {
            coords[3 * i..3 * i + 3].copy_from_slice(tip);
        }
        Self { coords }
    }

    /// Tip position of finger `i` (0-based) as `(x, y, z)`.
    pub fn tip(&self, i: usize) -> [f64; 3] {
        [self.coords[3 * i], self.coords[3 * i + 1], self.coords[3 * i + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.coords
    }

    pub fn coords(&self) -> [f64; STATE_DIM] {
        self.coords
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|c| c.is_finite())
    }
}

/// Canonical flattening: returns components in order `x1,y1,z1,...,z3`.
pub fn flatten(state: &GripperState) -> [f64; STATE_DIM] {
    state.coords
}

/// Inverse of [`flatten`].
pub fn unflatten(coords: [f64; STATE_DIM]) -> GripperState {
    GripperState::new(coords)
}

/// PWM duty-cycle fractions for the two control boards, dimensionless in
/// [0, 1]. Controllers keep values inside the configured actuation band
/// (default [0.20, 0.35]); the type itself only fixes the unit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlInput {
    duty: [f64; INPUT_DIM],
}

impl ControlInput {
    pub fn new(u1: f64, u2: f64) -> Self {
        Self { duty: [u1, u2] }
    }

    pub fn zero() -> Self {
        Self { duty: [0.0; 2] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.duty
    }

    pub fn duty(&self) -> [f64; INPUT_DIM] {
        self.duty
    }

    pub fn is_finite(&self) -> bool {
        self.duty.iter().all(|u| u.is_finite())
    }
}

/// One recorded step: the state observed at `step` and the input applied
/// from it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotEntry {
    pub step: usize,
    pub state: GripperState,
    pub input: ControlInput,
}

/// Sliding window of the last `capacity` (state, input) pairs, oldest
/// evicted first. Step indices must arrive strictly consecutive.
#[derive(Debug, Clone)]
pub struct SnapshotBuffer {
    entries: VecDeque<SnapshotEntry>,
    capacity: usize,
}

impl SnapshotBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "snapshot buffer capacity must be positive");
        Self {
            entries: VecDeque::with_capacity(capacity + 1),
            capacity,
        }
    }

    pub fn push(&mut self, step: usize, state: GripperState, input: ControlInput) {
        if let Some(last) = self.entries.back() {
            assert_eq!(
                step,
                last.step + 1,
                "snapshot steps must be strictly consecutive"
            );
        }
        self.entries.push_back(SnapshotEntry { step, state, input });
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn iter(&self) -> impl Iterator<Item = &SnapshotEntry> {
        self.entries.iter()
    }

    /// Newest step index in the window, if any.
    pub fn newest_step(&self) -> Option<usize> {
        self.entries.back().map(|e| e.step)
    }

    /// Assembles the EDMD training set for this window: the buffered states
    /// plus `successor` (the state observed after the newest entry), and the
    /// buffered inputs aligned so `inputs[m]` drives `states[m] -> states[m+1]`.
    pub fn training_set(
        &self,
        successor: &GripperState,
    ) -> (Vec<GripperState>, Vec<ControlInput>) {
        let mut states = Vec::with_capacity(self.entries.len() + 1);
        let mut inputs = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            states.push(e.state);
            inputs.push(e.input);
        }
        states.push(*successor);
        (states, inputs)
    }
}

/// Desired fingertip trajectory sampled every `dt` seconds; queries past
/// the end clamp to the final point (grasp-and-hold posture).
#[derive(Debug, Clone)]
pub struct ReferenceTrajectory {
    points: Vec<GripperState>,
    dt: f64,
}

impl ReferenceTrajectory {
    pub fn new(points: Vec<GripperState>, dt: f64) -> Self {
        assert!(!points.is_empty(), "reference trajectory must be nonempty");
        assert!(dt > 0.0, "sampling period must be positive");
        Self { points, dt }
    }

    /// Target at timestep `t`, clamped to the final point.
    pub fn at(&self, t: usize) -> &GripperState {
        let idx = t.min(self.points.len() - 1);
        &self.points[idx]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn final_point(&self) -> &GripperState {
        self.points.last().expect("nonempty by construction")
    }
}

/// 64-bit seed from which every random stream in a run is derived.
/// Identical seeds give bit-identical trial outcomes on one build.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Deterministic ChaCha8 stream for a named purpose (`salt`).
    pub fn stream(&self, salt: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(mix64(self.0.wrapping_add(mix64(salt))))
    }

    /// Derives an independent child seed, e.g. one per trial.
    pub fn derive(&self, k: u64) -> RngSeed {
        RngSeed(mix64(self.0 ^ mix64(k.wrapping_add(0x9e37_79b9_7f4a_7c15))))
    }
}

/// splitmix64 finalizer; spreads structured seeds over the full 64 bits.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
