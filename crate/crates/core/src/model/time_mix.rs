use super::wkv::WkvState;
use crate::autodiff::{CustomOp, Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Time-mixing parameters bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct TimeMixVars {
    pub wk: Var,
    pub wv: Var,
    pub wr: Var,
    pub wo: Var,
    /// Current-step bonus.
    pub u: Var,
    /// Decay parameter; the effective exponent is `−exp(w_raw)`.
    pub w_raw: Var,
}

fn check_finite(g: &Graph, v: Var, what: &str, channels: usize) -> Result<()> {
    if let Some(i) = g.value(v).iter().position(|x| x.is_nan()) {
        return Err(Error::Numeric(format!(
            "NaN in {what} at channel {}",
            i % channels
        )));
    }
    Ok(())
}

/// Values saved by the forward sweep, indexed `t · rows + i`.
struct Saved {
    a: Vec<f64>,
    b: Vec<f64>,
    e1: Vec<f64>,
    e2: Vec<f64>,
    den: Vec<f64>,
    d1: Vec<f64>,
    d2: Vec<f64>,
}

/// The whole WKV recurrence over `[B×T×C]` keys and values as one tape node.
/// Inputs are `k, v, u, w_eff`; the incoming state is a constant.
struct WkvOp {
    batch: usize,
    steps: usize,
    c: usize,
    saved: Saved,
}

/// Runs the recurrence, returning outputs, the saved values and the final state.
fn wkv_forward(
    k: &[f64],
    v: &[f64],
    u: &[f64],
    w: &[f64],
    (batch, steps, c): (usize, usize, usize),
    mut st: WkvState,
) -> (Vec<f64>, Saved, WkvState) {
    let rows = batch * c;
    let n = rows * steps;
    let mut y = vec![0.0; n];
    let mut sv = Saved {
        a: vec![0.0; n],
        b: vec![0.0; n],
        e1: vec![0.0; n],
        e2: vec![0.0; n],
        den: vec![0.0; n],
        d1: vec![0.0; n],
        d2: vec![0.0; n],
    };
    for t in 0..steps {
        for i in 0..rows {
            let (bi, ch) = (i / c, i % c);
            let idx = (bi * steps + t) * c + ch;
            let s = t * rows + i;
            let (a, b, p) = (st.a[i], st.b[i], st.p[i]);
            let (kt, vt) = (k[idx], v[idx]);
            let uk = u[ch] + kt;
            let q = p.max(uk);
            let e1 = (p - q).exp();
            let e2 = (uk - q).exp();
            let den = e1 * b + e2;
            y[idx] = (e1 * a + e2 * vt) / den;

            let pw = p + w[ch];
            let q2 = pw.max(kt);
            let d1 = (pw - q2).exp();
            let d2 = (kt - q2).exp();
            st.a[i] = d1 * a + d2 * vt;
            st.b[i] = d1 * b + d2;
            st.p[i] = q2;
            (sv.a[s], sv.b[s], sv.e1[s], sv.e2[s]) = (a, b, e1, e2);
            (sv.den[s], sv.d1[s], sv.d2[s]) = (den, d1, d2);
        }
    }
    (y, sv, st)
}

impl CustomOp for WkvOp {
    fn name(&self) -> &'static str {
        "wkv"
    }

    fn backward(&self, inputs: &[&[f64]], y: &[f64], gy: &[f64]) -> Result<Vec<Vec<f64>>> {
        let (v, c, steps) = (inputs[1], self.c, self.steps);
        let rows = self.batch * c;
        let sv = &self.saved;
        let mut gk = vec![0.0; v.len()];
        let mut gv = vec![0.0; v.len()];
        let mut gu = vec![0.0; c];
        let mut gw = vec![0.0; c];
        // gradients of the state leaving each step
        let mut ga = vec![0.0; rows];
        let mut gb = vec![0.0; rows];
        for t in (0..steps).rev() {
            for i in 0..rows {
                let (bi, ch) = (i / c, i % c);
                let idx = (bi * steps + t) * c + ch;
                let s = t * rows + i;
                let (e1, e2, den, d1, d2) = (sv.e1[s], sv.e2[s], sv.den[s], sv.d1[s], sv.d2[s]);
                let vt = v[idx];
                let gnum = gy[idx] / den;
                let gden = -gy[idx] * y[idx] / den;
                let (gan, gbn) = (ga[i], gb[i]);
                let guk = (gnum * vt + gden) * e2;
                gk[idx] = guk + (gan * vt + gbn) * d2;
                gv[idx] = gnum * e2 + gan * d2;
                gu[ch] += guk;
                gw[ch] += (gan * sv.a[s] + gbn * sv.b[s]) * d1;
                ga[i] = gnum * e1 + gan * d1;
                gb[i] = gden * e1 + gbn * d1;
            }
        }
        Ok(vec![gk, gv, gu, gw])
    }
}

/// `y_t = W_out(σ(r_t) ⊙ wkv_t)` over a `[B×T×C]` input.
///
/// The running-max shifts `p` and `q` only rescale numerator and denominator
/// together, so the backward treats them as constants; gradients flow through
/// the scaled accumulators and the exponentials of `k`, `u` and `w`.
pub fn time_mix(
    g: &mut Graph,
    x: Var,
    p: &TimeMixVars,
    state_in: Option<&WkvState>,
) -> Result<(Var, WkvState)> {
    let s = g.shape(x).to_vec();
    if s.len() != 3 {
        return Err(Error::Shape(format!("time_mix input must be [B×T×C], got {s:?}")));
    }
    let (batch, steps, c) = (s[0], s[1], s[2]);
    let k = g.matmul(x, p.wk)?;
    let v = g.matmul(x, p.wv)?;
    let r = g.matmul(x, p.wr)?;
    check_finite(g, k, "k", c)?;
    check_finite(g, v, "v", c)?;
    check_finite(g, p.u, "u", c)?;
    check_finite(g, p.w_raw, "w", c)?;
    let decay = g.exp(p.w_raw);
    let w_eff = g.neg(decay);

    let state = match state_in {
        Some(st) => {
            if st.channels() != c || st.rows() != batch {
                return Err(Error::Shape(format!(
                    "WKV state is {}×{}, input needs {batch}×{c}",
                    st.rows(),
                    st.channels()
                )));
            }
            st.clone()
        }
        None => WkvState::empty(batch, c),
    };
    let dims = (batch, steps, c);
    let (y, saved, out) = wkv_forward(g.value(k), g.value(v), g.value(p.u), g.value(w_eff), dims, state);
    let op = WkvOp {
        batch,
        steps,
        c,
        saved,
    };
    let wkv = g.custom(&[k, v, p.u, w_eff], Tensor::new([batch, steps, c], y)?, Box::new(op));
    let gate = g.sigmoid(r);
    let gated = g.mul(gate, wkv)?;
    let y = g.matmul(gated, p.wo)?;
    Ok((y, out))
}
