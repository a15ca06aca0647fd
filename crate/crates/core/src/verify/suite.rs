use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dense_circuit;
use super::finite_diff::relative_error;
use super::wkv_closed_form::wkv_channel;
use crate::autodiff::{Graph, ParamSet, Tensor};
use crate::error::Result;
use crate::model::{wkv_step, Model, ModelConfig, Variant, WkvState};
use crate::qsim::{circuit_gradients, run_circuit, CircuitSpec};

/// One line of the self-check table.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Worst finite-difference disagreement per parameter tensor.
#[derive(Debug, Clone)]
pub struct GradientReport {
    pub per_param: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub scalars_checked: usize,
}

/// C = 8, 2 layers, FFN 16, 2 heads, 2 qubits, depth 1.
pub fn gradient_check_config(variant: Variant) -> ModelConfig {
    ModelConfig {
        n_embd: 8,
        n_layer: 2,
        n_intermediate: 16,
        n_head: 2,
        n_qubits: 2,
        q_depth: 1,
        ..ModelConfig::desk(variant)
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect())
        .expect("shape matches buffer")
}

/// MSE loss of `model` on one batch, and its parameter gradients when `grads` is set.
fn loss_of(model: &Model, x: &Tensor, y: &Tensor, grads: Option<&mut ParamSet>) -> Result<f64> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let yv = g.constant(y.clone());
    let (pred, _) = model.forward(&mut g, xv, None)?;
    let loss = g.mse(pred, yv)?;
    if let Some(p) = grads {
        g.backward(loss, p)?;
    }
    Ok(g.value(loss)[0])
}

/// Compares every parameter gradient of an MSE loss against central
/// differences with `h = 1e-5` on a `B = 2, T = 6` batch.
pub fn model_gradient_check(config: &ModelConfig, seed: u64) -> Result<GradientReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(config.clone(), seed)?;
    let x = random_tensor(&mut rng, &[2, 6, 1], 1.0);
    let y = random_tensor(&mut rng, &[2, 6, 1], 1.0);
    let mut with_grads = model.params().clone();
    with_grads.zero_grad();
    loss_of(&model, &x, &y, Some(&mut with_grads))?;
    let h = 1e-5;
    let mut per_param = Vec::new();
    let mut scalars = 0;
    for (id, p) in with_grads.iter() {
        let analytic = p.grad.as_ref().map(|g| g.data().to_vec()).unwrap_or_default();
        let mut worst: f64 = 0.0;
        for (j, &a) in analytic.iter().enumerate() {
            let orig = model.params().get(id).value.data()[j];
            model.params_mut().get_mut(id).value.data_mut()[j] = orig + h;
            let up = loss_of(&model, &x, &y, None)?;
            model.params_mut().get_mut(id).value.data_mut()[j] = orig - h;
            let down = loss_of(&model, &x, &y, None)?;
            model.params_mut().get_mut(id).value.data_mut()[j] = orig;
            worst = worst.max(relative_error(a, (up - down) / (2.0 * h)));
            scalars += 1;
        }
        per_param.push((p.name.clone(), worst));
    }
    let max_rel_err = per_param.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(GradientReport {
        per_param,
        max_rel_err,
        scalars_checked: scalars,
    })
}

/// Largest gaps between the statevector simulator and the dense oracle over
/// `draws` random parameter sets for every `n ≤ max_n`, `L ≤ max_depth`:
/// `(expectation gap, gradient gap)`.
pub fn circuit_oracle_gaps(max_n: usize, max_depth: usize, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fwd, mut grad): (f64, f64) = (0.0, 0.0);
    for n in 1..=max_n {
        for depth in 0..=max_depth {
            for _ in 0..draws {
                let inputs: Vec<f64> = (0..n).map(|_| rng.random_range(-PI..PI)).collect();
                let weights: Vec<f64> = (0..n * depth).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
                let spec = CircuitSpec::new(n, depth, weights.clone())?;
                let z = run_circuit(&inputs, &spec)?;
                let want = dense_circuit::expectations(&inputs, &weights, n, depth);
                for (a, b) in z.iter().zip(&want) {
                    fwd = fwd.max((a - b).abs());
                }
                let jac = dense_circuit::jacobian(&inputs, &weights, n, depth);
                for (q, row) in jac.iter().enumerate() {
                    let mut up = vec![0.0; n];
                    up[q] = 1.0;
                    let g = circuit_gradients(&inputs, &spec, &up)?;
                    let ours = g.inputs.iter().chain(&g.weights);
                    for (a, b) in ours.zip(row) {
                        grad = grad.max((a - b).abs());
                    }
                }
            }
        }
    }
    Ok((fwd, grad))
}

/// Worst deviation from `cos θ` and `−sin θ` for one qubit over `points`
/// evenly spaced angles in `[0, 2π)`.
pub fn single_qubit_gaps(points: usize) -> Result<(f64, f64)> {
    let spec = CircuitSpec::zeros(1, 0)?;
    let (mut fwd, mut grad): (f64, f64) = (0.0, 0.0);
    for i in 0..points {
        let theta = 2.0 * PI * i as f64 / points as f64;
        let z = run_circuit(&[theta], &spec)?[0];
        let d = circuit_gradients(&[theta], &spec, &[1.0])?.inputs[0];
        fwd = fwd.max((z - theta.cos()).abs());
        grad = grad.max((d + theta.sin()).abs());
    }
    Ok((fwd, grad))
}

/// Largest gap between streamed `wkv_step` and the raw exponential sums
/// over `instances` random sequences with `T ≤ 8`, `C ≤ 4`.
pub fn wkv_oracle_gap(instances: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let t = rng.random_range(1..=8);
        let c = rng.random_range(1..=4);
        let k: Vec<f64> = (0..t * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let v: Vec<f64> = (0..t * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let u: Vec<f64> = (0..c).map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<f64> = (0..c).map(|_| -rng.random_range(0.01f64..3.0)).collect();
        let mut state = WkvState::empty(1, c);
        let mut streamed = vec![0.0; t * c];
        for s in 0..t {
            let (out, next) = wkv_step(&state, &k[s * c..(s + 1) * c], &v[s * c..(s + 1) * c], &u, &w)?;
            streamed[s * c..(s + 1) * c].copy_from_slice(&out);
            state = next;
        }
        for ch in 0..c {
            let kc: Vec<f64> = (0..t).map(|s| k[s * c + ch]).collect();
            let vc: Vec<f64> = (0..t).map(|s| v[s * c + ch]).collect();
            for (s, want) in wkv_channel(&kc, &vc, u[ch], w[ch]).into_iter().enumerate() {
                worst = worst.max((streamed[s * c + ch] - want).abs());
            }
        }
    }
    Ok(worst)
}

fn series_tensor(rng: &mut ChaCha8Rng, t: usize) -> Tensor {
    random_tensor(rng, &[1, t, 1], 1.5)
}

/// Largest gap between whole-sequence and chunked evaluation with carried state.
pub fn streaming_gap(config: &ModelConfig, seed: u64, len: usize, cuts: &[usize]) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let model = Model::new(config.clone(), seed)?;
    let x = series_tensor(&mut rng, len);
    let (whole, _) = model.predict(&x, None)?;
    let mut state = None;
    let mut chunked = Vec::with_capacity(len);
    let mut start = 0;
    for &end in cuts.iter().chain(std::iter::once(&len)) {
        let part = Tensor::new([1, end - start, 1], x.data()[start..end].to_vec())?;
        let (y, s) = model.predict(&part, state.as_ref())?;
        chunked.extend_from_slice(y.data());
        state = Some(s);
        start = end;
    }
    Ok(whole
        .data()
        .iter()
        .zip(&chunked)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Whether perturbing inputs after position `t` leaves outputs `..=t`
/// bitwise unchanged, and doubling the length only appends outputs.
pub fn causality_holds(config: &ModelConfig, seed: u64, len: usize) -> Result<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCA05);
    let model = Model::new(config.clone(), seed)?;
    let long = series_tensor(&mut rng, 2 * len);
    let short = Tensor::new([1, len, 1], long.data()[..len].to_vec())?;
    let (ys, _) = model.predict(&short, None)?;
    let (yl, _) = model.predict(&long, None)?;
    let same = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
    if !same(ys.data(), &yl.data()[..len]) {
        return Ok(false);
    }
    for t in 0..len {
        let mut perturbed = short.clone();
        for v in &mut perturbed.data_mut()[t + 1..] {
            *v += 0.75;
        }
        let (yp, _) = model.predict(&perturbed, None)?;
        if !same(&ys.data()[..=t], &yp.data()[..=t]) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Loss and shared-gradient gaps between a quantum model with `W_o = 0` and
/// a classical model holding the same remaining parameters: `(loss gap, worst gradient gap)`.
pub fn nulled_equivalence_gap(quantum: &ModelConfig, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0DD);
    let mut q = Model::new(quantum.with_variant(Variant::Quantum), seed)?;
    for p in q.params_mut().iter_mut() {
        if p.name.ends_with("ffn.q_out") {
            p.value.data_mut().fill(0.0);
        }
    }
    let mut c = Model::new(quantum.with_variant(Variant::Classical), seed.wrapping_add(1))?;
    c.copy_shared_params(q.params());
    let x = random_tensor(&mut rng, &[2, 8, 1], 1.0);
    let y = random_tensor(&mut rng, &[2, 8, 1], 1.0);
    let mut gq = q.params().clone();
    let mut gc = c.params().clone();
    let lq = loss_of(&q, &x, &y, Some(&mut gq))?;
    let lc = loss_of(&c, &x, &y, Some(&mut gc))?;
    let mut worst: f64 = 0.0;
    for (_, pc) in gc.iter() {
        let pq = gq.by_name(&pc.name).expect("classical names are a subset");
        let (a, b) = (pq.grad.as_ref().unwrap(), pc.grad.as_ref().unwrap());
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    Ok(((lq - lc).abs(), worst))
}

fn check(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckOutcome {
    let start = Instant::now();
    match f() {
        Ok((passed, detail)) => CheckOutcome {
            name,
            passed,
            detail: format!("{detail} ({:.2}s)", start.elapsed().as_secs_f64()),
        },
        Err(e) => CheckOutcome {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Every oracle check, in a fixed order.
pub fn run_suite() -> Vec<CheckOutcome> {
    let quantum = gradient_check_config(Variant::Quantum);
    vec![
        check("gradient fidelity", || {
            let r = model_gradient_check(&quantum, 11)?;
            Ok((
                r.max_rel_err < 1e-4,
                format!("max rel err {:.2e} over {} scalars", r.max_rel_err, r.scalars_checked),
            ))
        }),
        check("circuit oracle", || {
            let (f, g) = circuit_oracle_gaps(4, 3, 100, 5)?;
            Ok((f < 1e-10 && g < 1e-10, format!("expectation gap {f:.1e}, gradient gap {g:.1e}")))
        }),
        check("single-qubit analytics", || {
            let (f, g) = single_qubit_gaps(16)?;
            Ok((f < 1e-12 && g < 1e-12, format!("cos gap {f:.1e}, sin gap {g:.1e}")))
        }),
        check("wkv closed form", || {
            let gap = wkv_oracle_gap(50, 3)?;
            Ok((gap < 1e-10, format!("max gap {gap:.1e}")))
        }),
        check("streaming equivalence", || {
            let gap = streaming_gap(&quantum, 2, 24, &[5, 13])?;
            Ok((gap < 1e-12, format!("max gap {gap:.1e}")))
        }),
        check("causality", || {
            let ok = causality_holds(&quantum, 4, 12)?;
            Ok((ok, if ok { "bitwise".into() } else { "outputs changed".into() }))
        }),
        check("quantum-nulled equivalence", || {
            let (l, g) = nulled_equivalence_gap(&quantum, 9)?;
            Ok((l < 1e-10 && g < 1e-10, format!("loss gap {l:.1e}, gradient gap {g:.1e}")))
        }),
    ]
}
