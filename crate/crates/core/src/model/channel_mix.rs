use crate::autodiff::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::qsim::CircuitWorkspace;

/// Quantum-branch parameters bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct QuantumVars {
    /// `C × n` projection into circuit angles.
    pub wq: Var,
    /// `n × C` projection of the expectations back to channels.
    pub wo: Var,
    /// `depth × n` trainable rotation angles.
    pub phi: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct ChannelMixVars {
    pub w1: Var,
    pub w2: Var,
    pub wr: Var,
    pub quantum: Option<QuantumVars>,
}

/// `W₂(ReLU(x·W₁)²)` and the receptance gate `σ(x·W_r)`.
fn ffn_and_gate(g: &mut Graph, x: Var, p: &ChannelMixVars) -> Result<(Var, Var)> {
    let hidden = g.matmul(x, p.w1)?;
    let act = g.relu(hidden);
    let act = g.square(act);
    let ffn = g.matmul(act, p.w2)?;
    let r = g.matmul(x, p.wr)?;
    let gate = g.sigmoid(r);
    Ok((ffn, gate))
}

/// `σ(x·W_r) ⊙ W₂(ReLU(x·W₁)²)`.
pub fn channel_mix_classical(g: &mut Graph, x: Var, p: &ChannelMixVars) -> Result<Var> {
    let (ffn, gate) = ffn_and_gate(g, x, p)?;
    g.mul(gate, ffn)
}

/// `σ(x·W_r) ⊙ (W₂(ReLU(x·W₁)²) + VQC(x·W_q)·W_o)`, one circuit per position.
pub fn channel_mix_quantum(g: &mut Graph, x: Var, p: &ChannelMixVars) -> Result<Var> {
    let q = p
        .quantum
        .ok_or_else(|| Error::Contract("quantum channel mix without quantum parameters".into()))?;
    let (ffn, gate) = ffn_and_gate(g, x, p)?;
    let angles = g.matmul(x, q.wq)?;
    let z = circuit(g, angles, q.phi)?;
    let zp = g.matmul(z, q.wo)?;
    let sum = g.add(ffn, zp)?;
    g.mul(gate, sum)
}

/// Slack allowed on `|zᵢ| ≤ 1` before an expectation is reported as corrupt.
const Z_SLACK: f64 = 1e-9;

/// Evaluates the circuit on every row of `angles` (`[..×n]`) and records a
/// node whose backward is the parameter-shift rule.
fn circuit(g: &mut Graph, angles: Var, phi: Var) -> Result<Var> {
    let shape = g.shape(angles).to_vec();
    let n = *shape.last().unwrap_or(&0);
    let ps = g.shape(phi);
    if ps.len() != 2 || ps[1] != n {
        return Err(Error::dim("circuit weights", &shape, ps));
    }
    let depth = ps[0];
    let mut ws = CircuitWorkspace::new(n, depth)?;
    let xs = g.value(angles);
    let w = g.value(phi);
    let mut z = vec![0.0; xs.len()];
    for (xrow, zrow) in xs.chunks_exact(n).zip(z.chunks_exact_mut(n)) {
        ws.run(xrow, w, zrow)?;
    }
    if let Some(bad) = z.iter().find(|v| !(v.abs() <= 1.0 + Z_SLACK)) {
        return Err(Error::Numeric(format!(
            "circuit expectation {bad} outside [-1, 1]"
        )));
    }
    let out = Tensor::new(shape, z)?;
    Ok(g.custom(&[angles, phi], out, Box::new(CircuitOp { n, depth })))
}

struct CircuitOp {
    n: usize,
    depth: usize,
}

impl CustomOp for CircuitOp {
    fn name(&self) -> &'static str {
        "vqc"
    }

    fn backward(&self, inputs: &[&[f64]], _output: &[f64], grad_out: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (xs, w) = (inputs[0], inputs[1]);
        let n = self.n;
        let mut ws = CircuitWorkspace::new(n, self.depth)?;
        let mut dx = vec![0.0; xs.len()];
        let mut dw = vec![0.0; w.len()];
        let mut row_dw = vec![0.0; w.len()];
        // rows are reduced in order, so the weight gradient is deterministic
        for ((xrow, grow), dxrow) in xs
            .chunks_exact(n)
            .zip(grad_out.chunks_exact(n))
            .zip(dx.chunks_exact_mut(n))
        {
            ws.gradients(xrow, w, grow, dxrow, &mut row_dw)?;
            for (acc, d) in dw.iter_mut().zip(&row_dw) {
                *acc += d;
            }
        }
        Ok(vec![dx, dw])
    }
}
