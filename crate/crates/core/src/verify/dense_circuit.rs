//! Dense-matrix model of the variational circuit.
//!
//! Every gate is expanded to a full `2ⁿ × 2ⁿ` operator by Kronecker products
//! of 2×2 factors and the circuit is the ordered product of those operators.
//! Nothing here touches the state-vector kernels in [`crate::qsim`].

use num_complex::Complex64;

type C = Complex64;

/// Square complex matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    dim: usize,
    data: Vec<C>,
}

impl Dense {
    pub fn identity(dim: usize) -> Self {
        let mut data = vec![C::new(0.0, 0.0); dim * dim];
        for i in 0..dim {
            data[i * dim + i] = C::new(1.0, 0.0);
        }
        Self { dim, data }
    }

    fn from_2x2(m: [[C; 2]; 2]) -> Self {
        Self {
            dim: 2,
            data: vec![m[0][0], m[0][1], m[1][0], m[1][1]],
        }
    }

    pub fn at(&self, r: usize, c: usize) -> C {
        self.data[r * self.dim + c]
    }

    pub fn kron(&self, other: &Dense) -> Dense {
        let dim = self.dim * other.dim;
        let mut data = vec![C::new(0.0, 0.0); dim * dim];
        for i in 0..self.dim {
            for j in 0..self.dim {
                let a = self.at(i, j);
                for k in 0..other.dim {
                    for l in 0..other.dim {
                        data[(i * other.dim + k) * dim + j * other.dim + l] = a * other.at(k, l);
                    }
                }
            }
        }
        Dense { dim, data }
    }

    pub fn matmul(&self, other: &Dense) -> Dense {
        let d = self.dim;
        let mut data = vec![C::new(0.0, 0.0); d * d];
        for i in 0..d {
            for k in 0..d {
                let a = self.at(i, k);
                for j in 0..d {
                    data[i * d + j] += a * other.at(k, j);
                }
            }
        }
        Dense { dim: d, data }
    }

    pub fn add(&self, other: &Dense) -> Dense {
        Dense {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn apply(&self, v: &[C]) -> Vec<C> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.at(i, j) * v[j]).sum())
            .collect()
    }
}

fn rx(theta: f64) -> Dense {
    let (s, c) = (0.5 * theta).sin_cos();
    Dense::from_2x2([
        [C::new(c, 0.0), C::new(0.0, -s)],
        [C::new(0.0, -s), C::new(c, 0.0)],
    ])
}

/// dRX/dθ.
fn rx_prime(theta: f64) -> Dense {
    let (s, c) = (0.5 * theta).sin_cos();
    Dense::from_2x2([
        [C::new(-0.5 * s, 0.0), C::new(0.0, -0.5 * c)],
        [C::new(0.0, -0.5 * c), C::new(-0.5 * s, 0.0)],
    ])
}

fn pauli_x() -> Dense {
    Dense::from_2x2([
        [C::new(0.0, 0.0), C::new(1.0, 0.0)],
        [C::new(1.0, 0.0), C::new(0.0, 0.0)],
    ])
}

fn pauli_z() -> Dense {
    Dense::from_2x2([
        [C::new(1.0, 0.0), C::new(0.0, 0.0)],
        [C::new(0.0, 0.0), C::new(-1.0, 0.0)],
    ])
}

fn projector(bit: usize) -> Dense {
    let mut m = [[C::new(0.0, 0.0); 2]; 2];
    m[bit][bit] = C::new(1.0, 0.0);
    Dense::from_2x2(m)
}

/// `factor(q)` on each qubit, combined as `F(n−1) ⊗ … ⊗ F(0)` so that basis
/// bit `q` belongs to qubit `q`.
fn on_wires(n: usize, mut factor: impl FnMut(usize) -> Dense) -> Dense {
    let mut m = factor(n - 1);
    for q in (0..n - 1).rev() {
        m = m.kron(&factor(q));
    }
    m
}

pub fn single(n: usize, qubit: usize, gate: &Dense) -> Dense {
    on_wires(n, |q| if q == qubit { gate.clone() } else { Dense::identity(2) })
}

pub fn cnot(n: usize, control: usize, target: usize) -> Dense {
    let off = on_wires(n, |q| {
        if q == control {
            projector(0)
        } else {
            Dense::identity(2)
        }
    });
    let on = on_wires(n, |q| {
        if q == control {
            projector(1)
        } else if q == target {
            pauli_x()
        } else {
            Dense::identity(2)
        }
    });
    off.add(&on)
}

/// Operators of the circuit in application order, with the angle slot each
/// rotation reads (inputs `0..n`, then weights).
fn operators(inputs: &[f64], weights: &[f64], n: usize, depth: usize) -> Vec<(Dense, Option<usize>)> {
    let mut ops = Vec::new();
    for q in 0..n {
        ops.push((single(n, q, &rx(inputs[q])), Some(q)));
    }
    for l in 0..depth {
        for q in 0..n {
            ops.push((single(n, q, &rx(weights[l * n + q])), Some(n + l * n + q)));
        }
        for c in 0..n.saturating_sub(1) {
            ops.push((cnot(n, c, c + 1), None));
        }
    }
    ops
}

fn product(ops: &[Dense], dim: usize) -> Dense {
    ops.iter()
        .fold(Dense::identity(dim), |acc, g| g.matmul(&acc))
}

/// Full circuit unitary.
pub fn unitary(inputs: &[f64], weights: &[f64], n: usize, depth: usize) -> Dense {
    let ops: Vec<Dense> = operators(inputs, weights, n, depth)
        .into_iter()
        .map(|(g, _)| g)
        .collect();
    product(&ops, 1 << n)
}

fn expect(psi: &[C], op: &Dense, phi: &[C]) -> C {
    let o = op.apply(phi);
    psi.iter().zip(&o).map(|(a, b)| a.conj() * b).sum()
}

fn zero_state(dim: usize) -> Vec<C> {
    let mut v = vec![C::new(0.0, 0.0); dim];
    v[0] = C::new(1.0, 0.0);
    v
}

/// `⟨ψ|Zᵢ|ψ⟩` for `ψ = U|0…0⟩`.
pub fn expectations(inputs: &[f64], weights: &[f64], n: usize, depth: usize) -> Vec<f64> {
    let psi = unitary(inputs, weights, n, depth).apply(&zero_state(1 << n));
    (0..n)
        .map(|q| expect(&psi, &single(n, q, &pauli_z()), &psi).re)
        .collect()
}

/// Jacobian `∂zᵢ/∂θⱼ` by differentiating the operator product analytically.
/// Rows are qubits, columns the `n·(depth+1)` angle slots.
pub fn jacobian(inputs: &[f64], weights: &[f64], n: usize, depth: usize) -> Vec<Vec<f64>> {
    let dim = 1 << n;
    let ops = operators(inputs, weights, n, depth);
    let mats: Vec<Dense> = ops.iter().map(|(g, _)| g.clone()).collect();
    let psi = product(&mats, dim).apply(&zero_state(dim));
    let zs: Vec<Dense> = (0..n).map(|q| single(n, q, &pauli_z())).collect();
    let nslots = n * (depth + 1);
    let mut jac = vec![vec![0.0; nslots]; n];
    for (pos, (_, slot)) in ops.iter().enumerate() {
        let Some(slot) = *slot else { continue };
        let angle = if slot < n {
            inputs[slot]
        } else {
            weights[slot - n]
        };
        let qubit = if slot < n { slot } else { (slot - n) % n };
        let mut seq = mats.clone();
        seq[pos] = single(n, qubit, &rx_prime(angle));
        let dpsi = product(&seq, dim).apply(&zero_state(dim));
        for (q, z) in zs.iter().enumerate() {
            jac[q][slot] = 2.0 * expect(&psi, z, &dpsi).re;
        }
    }
    jac
}
