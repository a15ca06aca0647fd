//! State-vector simulation of the variational channel-mixing circuit.
//!
//! The circuit on `n` qubits is
//!
//! 1. `|0…0⟩`,
//! 2. one `RX(xᵢ)` per qubit encoding the input angles,
//! 3. `depth` layers, each a trainable `RX(φₗᵢ)` per qubit followed by the
//!    CNOT ladder `0→1, 1→2, …, n−2→n−1`,
//! 4. the Pauli-Z expectation of every qubit.
//!
//! Basis index bit `i` is qubit `i` (little-endian). Gradients use the
//! parameter-shift rule, which is exact for `RX` generators:
//! `∂f/∂θ = [f(θ + π/2) − f(θ − π/2)] / 2`.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_QUBITS: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amps: Vec<Complex64>,
}

impl QuantumState {
    /// `|0…0⟩` on `n_qubits` wires.
    pub fn new(n_qubits: usize) -> Result<Self> {
        Self::basis(n_qubits, 0)
    }

    /// Computational basis state `|index⟩`.
    pub fn basis(n_qubits: usize, index: usize) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Contract(format!(
                "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::Index {
                what: "basis index",
                index,
                len: dim,
            });
        }
        let mut amps = vec![Complex64::new(0.0, 0.0); dim];
        amps[index] = Complex64::new(1.0, 0.0);
        Ok(Self { n_qubits, amps })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Index {
                what: "qubit",
                index: qubit,
                len: self.n_qubits,
            });
        }
        Ok(())
    }

    pub fn apply_rx(&mut self, qubit: usize, theta: f64) -> Result<()> {
        self.check(qubit)?;
        rx_kernel(&mut self.amps, qubit, theta);
        Ok(())
    }

    pub fn apply_cnot(&mut self, control: usize, target: usize) -> Result<()> {
        self.check(control)?;
        self.check(target)?;
        if control == target {
            return Err(Error::Contract(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        cnot_kernel(&mut self.amps, control, target);
        Ok(())
    }

    /// `⟨ψ|Zᵢ|ψ⟩`.
    pub fn expectation_z(&self, qubit: usize) -> Result<f64> {
        self.check(qubit)?;
        Ok(z_kernel(&self.amps, qubit))
    }
}

#[inline]
fn rx_kernel(amps: &mut [Complex64], qubit: usize, theta: f64) {
    rx_kernel_sc(amps, qubit, (0.5 * theta).sin_cos());
}

/// `RX` given `(sin θ/2, cos θ/2)`.
#[inline]
fn rx_kernel_sc(amps: &mut [Complex64], qubit: usize, (s, c): (f64, f64)) {
    let bit = 1usize << qubit;
    let dim = amps.len();
    let mut base = 0;
    while base < dim {
        for i0 in base..base + bit {
            let i1 = i0 | bit;
            let (a0, a1) = (amps[i0], amps[i1]);
            // −i·s·a = (s·a.im, −s·a.re)
            amps[i0] = Complex64::new(c * a0.re + s * a1.im, c * a0.im - s * a1.re);
            amps[i1] = Complex64::new(c * a1.re + s * a0.im, c * a1.im - s * a0.re);
        }
        base += bit << 1;
    }
}

#[inline]
fn cnot_kernel(amps: &mut [Complex64], control: usize, target: usize) {
    let (cb, tb) = (1usize << control, 1usize << target);
    for i in 0..amps.len() {
        if i & cb != 0 && i & tb == 0 {
            amps.swap(i, i | tb);
        }
    }
}

#[inline]
fn z_kernel(amps: &[Complex64], qubit: usize) -> f64 {
    let bit = 1usize << qubit;
    amps.iter()
        .enumerate()
        .map(|(i, a)| if i & bit == 0 { a.norm_sqr() } else { -a.norm_sqr() })
        .sum()
}

/// Shape and trainable angles of the circuit.
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitSpec {
    n_qubits: usize,
    depth: usize,
    /// Row-major `depth × n_qubits`.
    weights: Vec<f64>,
}

impl CircuitSpec {
    pub fn new(n_qubits: usize, depth: usize, weights: Vec<f64>) -> Result<Self> {
        if n_qubits == 0 || n_qubits > MAX_QUBITS {
            return Err(Error::Contract(format!(
                "qubit count {n_qubits} outside 1..={MAX_QUBITS}"
            )));
        }
        if weights.len() != depth * n_qubits {
            return Err(Error::Shape(format!(
                "circuit weights hold {} angles, expected {depth}×{n_qubits}",
                weights.len()
            )));
        }
        Ok(Self {
            n_qubits,
            depth,
            weights,
        })
    }

    pub fn zeros(n_qubits: usize, depth: usize) -> Result<Self> {
        Self::new(n_qubits, depth, vec![0.0; n_qubits * depth])
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, layer: usize, qubit: usize) -> f64 {
        self.weights[layer * self.n_qubits + qubit]
    }

    /// CNOT pairs applied after each trainable layer, in order.
    pub fn ladder(&self) -> impl Iterator<Item = (usize, usize)> {
        (0..self.n_qubits.saturating_sub(1)).map(|i| (i, i + 1))
    }

    pub fn num_params(&self) -> usize {
        self.n_qubits * (self.depth + 1)
    }
}

#[derive(Debug, Clone, Copy)]
enum Gate {
    /// Rotation on `qubit` by angle slot `slot` (inputs first, then weights).
    Rx { qubit: usize, slot: usize },
    Cnot { control: usize, target: usize },
}

/// Gradients returned by [`circuit_gradients`].
#[derive(Debug, Clone, PartialEq)]
pub struct CircuitGradients {
    pub inputs: Vec<f64>,
    /// Row-major `depth × n_qubits`.
    pub weights: Vec<f64>,
}

/// Reusable buffers for evaluating one circuit shape many times.
#[derive(Debug, Clone)]
pub struct CircuitWorkspace {
    n_qubits: usize,
    depth: usize,
    gates: Vec<Gate>,
    /// Index into `gates` of the rotation that reads each angle slot.
    slot_gate: Vec<usize>,
    angles: Vec<f64>,
    /// `(sin, cos)` of half of each angle.
    half_trig: Vec<(f64, f64)>,
    /// `Σᵢ ±uᵢ` per basis index, filled by `gradients`.
    z_weights: Vec<f64>,
    state: Vec<Complex64>,
    scratch: Vec<Complex64>,
    snapshots: Vec<Vec<Complex64>>,
}

impl CircuitWorkspace {
    pub fn new(n_qubits: usize, depth: usize) -> Result<Self> {
        // validates the qubit count
        CircuitSpec::zeros(n_qubits, depth)?;
        let mut gates = Vec::new();
        let mut slot_gate = Vec::new();
        for q in 0..n_qubits {
            slot_gate.push(gates.len());
            gates.push(Gate::Rx { qubit: q, slot: q });
        }
        for l in 0..depth {
            for q in 0..n_qubits {
                slot_gate.push(gates.len());
                gates.push(Gate::Rx {
                    qubit: q,
                    slot: n_qubits + l * n_qubits + q,
                });
            }
            for c in 0..n_qubits.saturating_sub(1) {
                gates.push(Gate::Cnot {
                    control: c,
                    target: c + 1,
                });
            }
        }
        let dim = 1usize << n_qubits;
        let nparams = n_qubits * (depth + 1);
        Ok(Self {
            n_qubits,
            depth,
            gates,
            slot_gate,
            angles: vec![0.0; nparams],
            half_trig: vec![(0.0, 1.0); nparams],
            z_weights: vec![0.0; dim],
            state: vec![Complex64::new(0.0, 0.0); dim],
            scratch: vec![Complex64::new(0.0, 0.0); dim],
            snapshots: vec![vec![Complex64::new(0.0, 0.0); dim]; nparams],
        })
    }

    fn check(&self, inputs: &[f64], weights: &[f64]) -> Result<()> {
        if inputs.len() != self.n_qubits {
            return Err(Error::Shape(format!(
                "circuit on {} qubits given {} input angles",
                self.n_qubits,
                inputs.len()
            )));
        }
        if weights.len() != self.depth * self.n_qubits {
            return Err(Error::Shape(format!(
                "circuit weights hold {} angles, expected {}×{}",
                weights.len(),
                self.depth,
                self.n_qubits
            )));
        }
        Ok(())
    }

    fn load(&mut self, inputs: &[f64], weights: &[f64]) {
        let n = self.n_qubits;
        self.angles[..n].copy_from_slice(inputs);
        self.angles[n..].copy_from_slice(weights);
        for (t, a) in self.half_trig.iter_mut().zip(&self.angles) {
            *t = (0.5 * a).sin_cos();
        }
    }

    fn apply(gate: Gate, half_trig: &[(f64, f64)], amps: &mut [Complex64]) {
        match gate {
            Gate::Rx { qubit, slot } => rx_kernel_sc(amps, qubit, half_trig[slot]),
            Gate::Cnot { control, target } => cnot_kernel(amps, control, target),
        }
    }

    fn reset(amps: &mut [Complex64]) {
        amps.fill(Complex64::new(0.0, 0.0));
        amps[0] = Complex64::new(1.0, 0.0);
    }

    /// Writes `⟨Zᵢ⟩` for every qubit into `out`.
    pub fn run(&mut self, inputs: &[f64], weights: &[f64], out: &mut [f64]) -> Result<()> {
        self.check(inputs, weights)?;
        if out.len() != self.n_qubits {
            return Err(Error::Shape(format!(
                "output buffer of {} for {} qubits",
                out.len(),
                self.n_qubits
            )));
        }
        self.load(inputs, weights);
        Self::reset(&mut self.state);
        for &g in &self.gates {
            Self::apply(g, &self.half_trig, &mut self.state);
        }
        for (q, o) in out.iter_mut().enumerate() {
            *o = z_kernel(&self.state, q);
        }
        Ok(())
    }

    fn fill_z_weights(weights: &mut [f64], upstream: &[f64]) {
        for (idx, w) in weights.iter_mut().enumerate() {
            *w = 0.0;
            for (q, u) in upstream.iter().enumerate() {
                if idx >> q & 1 == 0 {
                    *w += u;
                } else {
                    *w -= u;
                }
            }
        }
    }

    /// `Σᵢ uᵢ⟨Zᵢ⟩` from weights built by `fill_z_weights`.
    fn weighted_z(amps: &[Complex64], weights: &[f64]) -> f64 {
        amps.iter().zip(weights).map(|(a, w)| a.norm_sqr() * w).sum()
    }

    /// Parameter-shift gradients of `upstream · z`. `d_inputs` has `n` entries,
    /// `d_weights` has `depth × n`.
    pub fn gradients(
        &mut self,
        inputs: &[f64],
        weights: &[f64],
        upstream: &[f64],
        d_inputs: &mut [f64],
        d_weights: &mut [f64],
    ) -> Result<()> {
        self.check(inputs, weights)?;
        let n = self.n_qubits;
        if upstream.len() != n || d_inputs.len() != n || d_weights.len() != self.depth * n {
            return Err(Error::Shape(format!(
                "gradient buffers ({}, {}, {}) for a {}-qubit depth-{} circuit",
                upstream.len(),
                d_inputs.len(),
                d_weights.len(),
                n,
                self.depth
            )));
        }
        if upstream.iter().all(|&u| u == 0.0) {
            d_inputs.fill(0.0);
            d_weights.fill(0.0);
            return Ok(());
        }
        self.load(inputs, weights);
        Self::fill_z_weights(&mut self.z_weights, upstream);
        // Forward sweep, keeping the state just before every rotation.
        Self::reset(&mut self.state);
        let mut next_slot = 0;
        for (gi, &g) in self.gates.iter().enumerate() {
            if next_slot < self.slot_gate.len() && self.slot_gate[next_slot] == gi {
                self.snapshots[next_slot].copy_from_slice(&self.state);
                next_slot += 1;
            }
            Self::apply(g, &self.half_trig, &mut self.state);
        }
        for slot in 0..self.angles.len() {
            let gi = self.slot_gate[slot];
            let Gate::Rx { qubit, .. } = self.gates[gi] else {
                unreachable!("slot gates are rotations")
            };
            let mut f = [0.0; 2];
            for (k, shift) in [FRAC_PI_2, -FRAC_PI_2].into_iter().enumerate() {
                self.scratch.copy_from_slice(&self.snapshots[slot]);
                rx_kernel(&mut self.scratch, qubit, self.angles[slot] + shift);
                for &g in &self.gates[gi + 1..] {
                    Self::apply(g, &self.half_trig, &mut self.scratch);
                }
                f[k] = Self::weighted_z(&self.scratch, &self.z_weights);
            }
            let d = 0.5 * (f[0] - f[1]);
            if slot < n {
                d_inputs[slot] = d;
            } else {
                d_weights[slot - n] = d;
            }
        }
        Ok(())
    }
}

/// Expectation vector `z` of the circuit for the given input angles.
pub fn run_circuit(inputs: &[f64], spec: &CircuitSpec) -> Result<Vec<f64>> {
    let mut ws = CircuitWorkspace::new(spec.n_qubits, spec.depth)?;
    let mut out = vec![0.0; spec.n_qubits];
    ws.run(inputs, &spec.weights, &mut out)?;
    Ok(out)
}

/// Exact gradients of `upstream · z` with respect to inputs and weights.
pub fn circuit_gradients(
    inputs: &[f64],
    spec: &CircuitSpec,
    upstream: &[f64],
) -> Result<CircuitGradients> {
    let mut ws = CircuitWorkspace::new(spec.n_qubits, spec.depth)?;
    let mut grads = CircuitGradients {
        inputs: vec![0.0; spec.n_qubits],
        weights: vec![0.0; spec.weights.len()],
    };
    ws.gradients(
        inputs,
        &spec.weights,
        upstream,
        &mut grads.inputs,
        &mut grads.weights,
    )?;
    Ok(grads)
}
