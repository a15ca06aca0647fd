use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::verify::finite_diff::{central_difference, max_relative_error};
use crate::verify::{causality_holds, gradient_check_config, nulled_equivalence_gap, streaming_gap};

fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| scale * rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn time_vars(g: &mut Graph, rng: &mut ChaCha8Rng, c: usize) -> TimeMixVars {
    let s = 1.0 / (c as f64).sqrt();
    TimeMixVars {
        wk: g.input(rand_t(rng, &[c, c], s), true),
        wv: g.input(rand_t(rng, &[c, c], s), true),
        wr: g.input(rand_t(rng, &[c, c], s), true),
        wo: g.input(rand_t(rng, &[c, c], s), true),
        u: g.input(rand_t(rng, &[c], 0.5), true),
        w_raw: g.input(rand_t(rng, &[c], 1.0), true),
    }
}

fn channel_vars(g: &mut Graph, rng: &mut ChaCha8Rng, c: usize, d: usize, q: Option<(usize, usize)>) -> ChannelMixVars {
    let s = 1.0 / (c as f64).sqrt();
    ChannelMixVars {
        w1: g.input(rand_t(rng, &[c, d], s), true),
        w2: g.input(rand_t(rng, &[d, c], s), true),
        wr: g.input(rand_t(rng, &[c, c], s), true),
        quantum: q.map(|(n, depth)| QuantumVars {
            wq: g.input(rand_t(rng, &[c, n], s), true),
            wo: g.input(rand_t(rng, &[n, c], s), true),
            phi: g.input(rand_t(rng, &[depth, n], 3.0), true),
        }),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Row-major `[m×k]·[k×n]` with plain loops.
fn dot(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|l| a[i * k + l] * b[l * n + j]).sum();
        }
    }
    out
}

// ---- time mixing ----

#[test]
fn time_mix_single_step_gates_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut g = Graph::new();
    let c = 4;
    let p = time_vars(&mut g, &mut rng, c);
    let x = g.input(rand_t(&mut rng, &[1, 1, c], 1.0), false);
    let (y, _) = time_mix(&mut g, x, &p, None).unwrap();
    let xv = g.value(x).to_vec();
    let v = dot(&xv, g.value(p.wv), 1, c, c);
    let r = dot(&xv, g.value(p.wr), 1, c, c);
    let gated: Vec<f64> = r.iter().zip(&v).map(|(r, v)| sigmoid(*r) * v).collect();
    let want = dot(&gated, g.value(p.wo), 1, c, c);
    assert!(max_gap(g.value(y), &want) < 1e-12);
}

#[test]
fn time_mix_matches_plain_recurrence() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut g = Graph::new();
    let (b, t, c) = (2, 5, 3);
    let p = time_vars(&mut g, &mut rng, c);
    let x = g.input(rand_t(&mut rng, &[b, t, c], 1.0), false);
    let (y, st) = time_mix(&mut g, x, &p, None).unwrap();
    let xv = g.value(x).to_vec();
    let k = dot(&xv, g.value(p.wk), b * t, c, c);
    let v = dot(&xv, g.value(p.wv), b * t, c, c);
    let r = dot(&xv, g.value(p.wr), b * t, c, c);
    let w: Vec<f64> = g.value(p.w_raw).iter().map(|w| -w.exp()).collect();
    let u = g.value(p.u).to_vec();
    let mut want = vec![0.0; b * t * c];
    let mut last = Vec::new();
    for row in 0..b {
        let mut s = WkvState::empty(1, c);
        for step in 0..t {
            let o = (row * t + step) * c;
            let (wkv, next) = wkv_step(&s, &k[o..o + c], &v[o..o + c], &u, &w).unwrap();
            for ch in 0..c {
                want[o + ch] = sigmoid(r[o + ch]) * wkv[ch];
            }
            s = next;
        }
        last.push(s);
    }
    let want = dot(&want, g.value(p.wo), b * t, c, c);
    assert!(max_gap(g.value(y), &want) < 1e-12);
    let last = WkvState::concat(&last).unwrap();
    for (a, b) in [(&st.a, &last.a), (&st.b, &last.b), (&st.p, &last.p)] {
        assert!(max_gap(a, b) < 1e-12);
    }
}

#[test]
fn time_mix_split_equals_concatenated() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = Graph::new();
    let c = 4;
    let p = time_vars(&mut g, &mut rng, c);
    let full = rand_t(&mut rng, &[1, 8, c], 1.0);
    let head = Tensor::new([1, 3, c], full.data()[..3 * c].to_vec()).unwrap();
    let tail = Tensor::new([1, 5, c], full.data()[3 * c..].to_vec()).unwrap();
    let xf = g.constant(full);
    let xh = g.constant(head);
    let xt = g.constant(tail);
    let (yf, sf) = time_mix(&mut g, xf, &p, None).unwrap();
    let (yh, sh) = time_mix(&mut g, xh, &p, None).unwrap();
    let (yt, st) = time_mix(&mut g, xt, &p, Some(&sh)).unwrap();
    let mut split = g.value(yh).to_vec();
    split.extend_from_slice(g.value(yt));
    assert!(max_gap(g.value(yf), &split) < 1e-12);
    assert!(max_gap(&sf.a, &st.a) < 1e-12);
}

#[test]
fn time_mix_gradient_wrt_bonus() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let c = 4;
    let mut g0 = Graph::new();
    let p0 = time_vars(&mut g0, &mut rng, c);
    let x = rand_t(&mut rng, &[2, 6, c], 1.0);
    let tensors: Vec<Tensor> = [p0.wk, p0.wv, p0.wr, p0.wo, p0.u, p0.w_raw]
        .iter()
        .map(|v| g0.tensor(*v))
        .collect();
    let eval = |u: &[f64], want_grad: bool| {
        let mut g = Graph::new();
        let mut vs: Vec<Var> = tensors.iter().map(|t| g.input(t.clone(), true)).collect();
        vs[4] = g.input(Tensor::vector(u.to_vec()), true);
        let p = TimeMixVars {
            wk: vs[0],
            wv: vs[1],
            wr: vs[2],
            wo: vs[3],
            u: vs[4],
            w_raw: vs[5],
        };
        let xv = g.constant(x.clone());
        let (y, _) = time_mix(&mut g, xv, &p, None).unwrap();
        let loss = g.sum(y);
        let grad = want_grad.then(|| g.gradients(loss).unwrap().get(p.u).unwrap().to_vec());
        (g.value(loss)[0], grad)
    };
    let u0 = tensors[4].data().to_vec();
    let analytic = eval(&u0, true).1.unwrap();
    let numeric = central_difference(|u| eval(u, false).0, &u0, 1e-5);
    assert!(max_relative_error(&analytic, &numeric) < 1e-4);
}

// ---- channel mixing ----

fn reference_channel_mix(x: &[f64], rows: usize, c: usize, d: usize, g: &Graph, p: &ChannelMixVars) -> Vec<f64> {
    let mut out = vec![0.0; rows * c];
    let (w1, w2, wr) = (g.value(p.w1), g.value(p.w2), g.value(p.wr));
    for row in 0..rows {
        let xi = &x[row * c..(row + 1) * c];
        let mut hidden = vec![0.0; d];
        for (j, h) in hidden.iter_mut().enumerate() {
            let s: f64 = (0..c).map(|i| xi[i] * w1[i * d + j]).sum();
            *h = if s > 0.0 { s * s } else { 0.0 };
        }
        for o in 0..c {
            let ffn: f64 = (0..d).map(|j| hidden[j] * w2[j * c + o]).sum();
            let r: f64 = (0..c).map(|i| xi[i] * wr[i * c + o]).sum();
            out[row * c + o] = 1.0 / (1.0 + (-r).exp()) * ffn;
        }
    }
    out
}

#[test]
fn channel_mix_zero_key_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let (c, d) = (4, 8);
    let mut p = channel_vars(&mut g, &mut rng, c, d, None);
    let x = g.input(rand_t(&mut rng, &[2, 3, c], 1.0), false);
    p.w1 = g.constant(Tensor::zeros([c, d]));
    let y = channel_mix_classical(&mut g, x, &p).unwrap();
    assert!(g.value(y).iter().all(|v| *v == 0.0));
    let p = channel_vars(&mut g, &mut rng, c, d, None);
    let zero = g.constant(Tensor::zeros([2, 3, c]));
    let y = channel_mix_classical(&mut g, zero, &p).unwrap();
    assert!(g.value(y).iter().all(|v| *v == 0.0));
}

#[test]
fn channel_mix_matches_straight_line_code() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut g = Graph::new();
    let (c, d) = (5, 12);
    let p = channel_vars(&mut g, &mut rng, c, d, None);
    let x = g.input(rand_t(&mut rng, &[2, 4, c], 1.0), false);
    let y = channel_mix_classical(&mut g, x, &p).unwrap();
    let want = reference_channel_mix(&g.value(x).to_vec(), 8, c, d, &g, &p);
    assert!(max_gap(g.value(y), &want) < 1e-12);
}

#[test]
fn quantum_mix_with_null_readout_is_classical() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut g = Graph::new();
    let (c, d, n) = (4, 8, 3);
    let mut p = channel_vars(&mut g, &mut rng, c, d, Some((n, 2)));
    let q = p.quantum.as_mut().unwrap();
    q.wo = g.constant(Tensor::zeros([n, c]));
    let x = g.input(rand_t(&mut rng, &[2, 3, c], 1.0), false);
    let yq = channel_mix_quantum(&mut g, x, &p).unwrap();
    let yc = channel_mix_classical(&mut g, x, &p).unwrap();
    assert_eq!(g.value(yq), g.value(yc));
}

#[test]
fn quantum_mix_constant_circuit() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut g = Graph::new();
    let (c, d, n) = (4, 8, 2);
    let mut p = channel_vars(&mut g, &mut rng, c, d, Some((n, 2)));
    let q = p.quantum.as_mut().unwrap();
    q.wq = g.constant(Tensor::zeros([c, n]));
    q.phi = g.constant(Tensor::zeros([2, n]));
    let wo = g.value(q.wo).to_vec();
    let x = g.input(rand_t(&mut rng, &[1, 3, c], 1.0), false);
    let y = channel_mix_quantum(&mut g, x, &p).unwrap();
    let xv = g.value(x).to_vec();
    let ffn_gated = reference_channel_mix(&xv, 3, c, d, &g, &p);
    let wr = g.value(p.wr).to_vec();
    let r = dot(&xv, &wr, 3, c, c);
    // z = 1 everywhere, so z·W_o is the column sum of W_o
    for row in 0..3 {
        for o in 0..c {
            let zsum: f64 = (0..n).map(|i| wo[i * c + o]).sum();
            let want = ffn_gated[row * c + o] + sigmoid(r[row * c + o]) * zsum;
            assert!((g.value(y)[row * c + o] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn quantum_mix_gradient_wrt_angles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (c, d, n, depth) = (8, 16, 4, 2);
    let mut g0 = Graph::new();
    let p0 = channel_vars(&mut g0, &mut rng, c, d, Some((n, depth)));
    let q0 = p0.quantum.unwrap();
    let fixed: Vec<Tensor> = [p0.w1, p0.w2, p0.wr, q0.wq, q0.wo]
        .iter()
        .map(|v| g0.tensor(*v))
        .collect();
    let x = rand_t(&mut rng, &[2, 3, c], 1.0);
    let eval = |phi: &[f64], want_grad: bool| {
        let mut g = Graph::new();
        let v: Vec<Var> = fixed.iter().map(|t| g.input(t.clone(), true)).collect();
        let phi = g.input(Tensor::new([depth, n], phi.to_vec()).unwrap(), true);
        let p = ChannelMixVars {
            w1: v[0],
            w2: v[1],
            wr: v[2],
            quantum: Some(QuantumVars { wq: v[3], wo: v[4], phi }),
        };
        let xv = g.constant(x.clone());
        let y = channel_mix_quantum(&mut g, xv, &p).unwrap();
        let sq = g.square(y);
        let loss = g.sum(sq);
        let grad = want_grad.then(|| g.gradients(loss).unwrap().get(phi).unwrap().to_vec());
        (g.value(loss)[0], grad)
    };
    let phi0 = g0.value(q0.phi).to_vec();
    let analytic = eval(&phi0, true).1.unwrap();
    let numeric = central_difference(|p| eval(p, false).0, &phi0, 1e-5);
    assert!(max_relative_error(&analytic, &numeric) < 1e-4);
}

// ---- blocks ----

fn zero_block(g: &mut Graph, c: usize, d: usize) -> BlockVars {
    let mut z = |shape: &[usize]| g.constant(Tensor::zeros(shape));
    BlockVars {
        ln1: (z(&[c]), z(&[c])),
        time: TimeMixVars {
            wk: z(&[c, c]),
            wv: z(&[c, c]),
            wr: z(&[c, c]),
            wo: z(&[c, c]),
            u: z(&[c]),
            w_raw: z(&[c]),
        },
        ln2: (z(&[c]), z(&[c])),
        channel: ChannelMixVars {
            w1: z(&[c, d]),
            w2: z(&[d, c]),
            wr: z(&[c, c]),
            quantum: None,
        },
    }
}

#[test]
fn zero_block_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut g = Graph::new();
    let p = zero_block(&mut g, 4, 8);
    let x = g.input(rand_t(&mut rng, &[2, 5, 4], 1.0), false);
    let (y, _) = block_forward(&mut g, x, &p, None).unwrap();
    assert_eq!(g.value(y), g.value(x));
}

#[test]
fn block_is_composition_of_mixers() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = Graph::new();
    let (c, d) = (6, 12);
    let ln = |g: &mut Graph, rng: &mut ChaCha8Rng| {
        (g.input(rand_t(rng, &[c], 1.0), true), g.input(rand_t(rng, &[c], 1.0), true))
    };
    let ln1 = ln(&mut g, &mut rng);
    let time = time_vars(&mut g, &mut rng, c);
    let ln2 = ln(&mut g, &mut rng);
    let channel = channel_vars(&mut g, &mut rng, c, d, Some((2, 1)));
    let p = BlockVars { ln1, time, ln2, channel };
    let x = g.input(rand_t(&mut rng, &[2, 4, c], 1.0), false);
    let (y, _) = block_forward(&mut g, x, &p, None).unwrap();

    let h = g.layer_norm(x, ln1.0, ln1.1, LN_EPS).unwrap();
    let (a, _) = time_mix(&mut g, h, &time, None).unwrap();
    let xa: Vec<f64> = g.value(x).iter().zip(g.value(a)).map(|(x, a)| x + a).collect();
    let xa = g.constant(Tensor::new([2, 4, c], xa).unwrap());
    let h2 = g.layer_norm(xa, ln2.0, ln2.1, LN_EPS).unwrap();
    let cm = channel_mix_quantum(&mut g, h2, &channel).unwrap();
    let want: Vec<f64> = g.value(xa).iter().zip(g.value(cm)).map(|(x, c)| x + c).collect();
    assert!(max_gap(g.value(y), &want) < 1e-12);
}

#[test]
fn deep_stack_stays_finite() {
    let config = ModelConfig {
        n_layer: 6,
        ..ModelConfig::desk(Variant::Quantum)
    };
    let m = Model::new(config, 12).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = rand_t(&mut rng, &[2, 16, 1], 2.0);
    let (y, _) = m.predict(&x, None).unwrap();
    assert!(y.data().iter().all(|v| v.is_finite()));
}

// ---- full model ----

fn small(variant: Variant) -> ModelConfig {
    gradient_check_config(variant)
}

#[test]
fn head_bias_alone_gives_constant_output() {
    let mut m = Model::new(small(Variant::Quantum), 13).unwrap();
    for p in m.params_mut().iter_mut() {
        let beta = if p.name == "head.bias" { 0.625 } else { 0.0 };
        p.value.data_mut().fill(beta);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (y, _) = m.predict(&rand_t(&mut rng, &[2, 5, 1], 1.0), None).unwrap();
    assert!(y.data().iter().all(|v| *v == 0.625));
}

#[test]
fn batch_equals_stacked_single_rows() {
    let m = Model::new(small(Variant::Quantum), 14).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let x = rand_t(&mut rng, &[2, 7, 1], 1.0);
    let (yb, _) = m.predict(&x, None).unwrap();
    let mut rows = Vec::new();
    for r in 0..2 {
        let xr = Tensor::new([1, 7, 1], x.data()[r * 7..(r + 1) * 7].to_vec()).unwrap();
        rows.extend(m.predict(&xr, None).unwrap().0.into_data());
    }
    assert!(max_gap(yb.data(), &rows) < 1e-12);
}

#[test]
fn causality_and_streaming() {
    for variant in Variant::ALL {
        let cfg = small(variant);
        assert!(causality_holds(&cfg, 15, 10).unwrap());
        assert!(streaming_gap(&cfg, 16, 20, &[1, 8, 9]).unwrap() < 1e-12);
    }
}

#[test]
fn nulled_quantum_matches_classical() {
    let (l, g) = nulled_equivalence_gap(&small(Variant::Quantum), 17).unwrap();
    assert!(l < 1e-10 && g < 1e-10, "loss gap {l}, grad gap {g}");
}

#[test]
fn shared_parameters_match_across_variants() {
    let q = Model::new(ModelConfig::desk(Variant::Quantum), 18).unwrap();
    let c = Model::new(ModelConfig::desk(Variant::Classical), 18).unwrap();
    for (_, p) in c.params().iter() {
        assert_eq!(q.params().by_name(&p.name).unwrap().value, p.value, "{}", p.name);
    }
    assert_eq!(q.params().len(), c.params().len() + 3 * 2);
}

#[test]
fn decay_init_bands_by_head() {
    let w = decay_init(8, 4, 16.0);
    for h in 0..4 {
        assert_eq!(w[2 * h], w[2 * h + 1]);
    }
    let half_life = |w: f64| std::f64::consts::LN_2 / w.exp();
    assert!((half_life(w[0]) - 1.0).abs() < 1e-12);
    assert!((half_life(w[7]) - 16.0).abs() < 1e-9);
    assert!(w.windows(2).all(|p| p[0] >= p[1]));
}

#[test]
fn rejects_bad_input_shape_and_state() {
    let m = Model::new(small(Variant::Classical), 19).unwrap();
    assert!(m.predict(&Tensor::zeros([2, 3, 2]), None).is_err());
    let state = m.empty_state(3);
    assert!(m.predict(&Tensor::zeros([2, 3, 1]), Some(&state)).is_err());
}

#[test]
fn config_validation() {
    let bad_heads = ModelConfig {
        n_head: 3,
        ..ModelConfig::desk(Variant::Classical)
    };
    assert!(matches!(Model::new(bad_heads, 0), Err(Error::Config(_))));
    let no_qubits = ModelConfig {
        n_qubits: 0,
        ..ModelConfig::desk(Variant::Quantum)
    };
    assert!(Model::new(no_qubits.clone(), 0).is_err());
    assert!(Model::new(no_qubits.with_variant(Variant::Classical), 0).is_ok());
    assert!(ModelConfig::paper(Variant::Quantum).validate().is_ok());
}

/// CPU time of the calling thread, unaffected by other load on the machine.
fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    assert_eq!(rc, 0);
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[test]
fn forward_time_scales_linearly() {
    crate::alloc::keep_large_buffers();
    let m = Model::new(ModelConfig::desk(Variant::Quantum), 20).unwrap();
    let time = |t: usize| {
        let x = Tensor::zeros([1, t, 1]);
        let mut best = f64::MAX;
        for _ in 0..9 {
            let start = thread_cpu_seconds();
            m.predict(&x, None).unwrap();
            best = best.min(thread_cpu_seconds() - start);
        }
        best
    };
    let (t64, t128, t256) = (time(64), time(128), time(256));
    for (short, long) in [(t64, t128), (t128, t256)] {
        assert!(long / short < 2.0 * 1.3, "{t64:.4} {t128:.4} {t256:.4}");
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn perturbing_the_future_leaves_the_past(seed in 0u64..1000, cut in 1usize..9) {
            let m = Model::new(small(Variant::Quantum), seed).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = rand_t(&mut rng, &[1, 10, 1], 1.0);
            let mut xp = x.clone();
            xp.data_mut()[cut] += 1.0;
            let (a, _) = m.predict(&x, None).unwrap();
            let (b, _) = m.predict(&xp, None).unwrap();
            for t in 0..cut {
                prop_assert_eq!(a.data()[t].to_bits(), b.data()[t].to_bits());
            }
        }

        #[test]
        fn wkv_denominator_positive(
            ks in proptest::collection::vec(-30.0f64..30.0, 1..12),
            u in -5.0f64..5.0,
            w in -5.0f64..-1e-3,
        ) {
            let mut s = WkvState::empty(1, 1);
            for k in ks {
                let (out, next) = wkv_step(&s, &[k], &[1.0], &[u], &[w]).unwrap();
                prop_assert!((out[0] - 1.0).abs() < 1e-12);
                prop_assert!(next.b[0] > 0.0 && next.p[0].is_finite());
                s = next;
            }
        }
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let r = crate::verify::model_gradient_check(&small(Variant::Quantum), 21).unwrap();
    assert!(r.max_rel_err < 1e-4, "{:?}", r.per_param);
    assert!(r.per_param.iter().any(|(n, _)| n.ends_with("q_weights")));
}
