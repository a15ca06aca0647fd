//! Streaming WKV recurrence with a running max exponent.
//!
//! The accumulators hold `A·e^{−p}` and `B·e^{−p}` where `A`, `B` are the raw
//! decayed sums, so every exponent stays bounded no matter how long the
//! sequence runs.

use crate::error::{Error, Result};

/// Per-row, per-channel accumulators, flattened as `rows × channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct WkvState {
    channels: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub p: Vec<f64>,
}

impl WkvState {
    /// `a = b = 0`, `p = −∞` for `rows` independent sequences.
    pub fn empty(rows: usize, channels: usize) -> Self {
        Self {
            channels,
            a: vec![0.0; rows * channels],
            b: vec![0.0; rows * channels],
            p: vec![f64::NEG_INFINITY; rows * channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn rows(&self) -> usize {
        self.a.len() / self.channels.max(1)
    }

    /// Stacks single-row states into one batch state.
    pub fn concat(rows: &[WkvState]) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.channels);
        let mut out = Self::empty(0, c);
        for r in rows {
            if r.channels != c {
                return Err(Error::Shape(format!(
                    "cannot stack WKV states with {} and {} channels",
                    c, r.channels
                )));
            }
            out.a.extend_from_slice(&r.a);
            out.b.extend_from_slice(&r.b);
            out.p.extend_from_slice(&r.p);
        }
        Ok(out)
    }

    /// Single row `i` of a batch state.
    pub fn row(&self, i: usize) -> Self {
        let c = self.channels;
        let r = i * c..(i + 1) * c;
        Self {
            channels: c,
            a: self.a[r.clone()].to_vec(),
            b: self.b[r.clone()].to_vec(),
            p: self.p[r].to_vec(),
        }
    }
}

/// One recurrence step. `k` and `v` cover every row of `state`; `u` and
/// `w_eff` are per channel and repeat across rows.
pub fn wkv_step(
    state: &WkvState,
    k: &[f64],
    v: &[f64],
    u: &[f64],
    w_eff: &[f64],
) -> Result<(Vec<f64>, WkvState)> {
    let c = state.channels;
    let n = state.a.len();
    if k.len() != n || v.len() != n || u.len() != c || w_eff.len() != c {
        return Err(Error::Shape(format!(
            "wkv_step on {n} accumulators given k:{} v:{} u:{} w:{}",
            k.len(),
            v.len(),
            u.len(),
            w_eff.len()
        )));
    }
    let mut out = vec![0.0; n];
    let mut next = state.clone();
    for i in 0..n {
        let ch = i % c;
        for (name, x) in [("k", k[i]), ("v", v[i]), ("u", u[ch]), ("w", w_eff[ch])] {
            if x.is_nan() {
                return Err(Error::Numeric(format!("NaN in {name} at channel {ch}")));
            }
        }
        let (a, b, p) = (state.a[i], state.b[i], state.p[i]);
        let uk = u[ch] + k[i];
        let q = p.max(uk);
        let e1 = (p - q).exp();
        let e2 = (uk - q).exp();
        out[i] = (e1 * a + e2 * v[i]) / (e1 * b + e2);

        let pw = p + w_eff[ch];
        let q2 = pw.max(k[i]);
        let d1 = (pw - q2).exp();
        let d2 = (k[i] - q2).exp();
        next.a[i] = d1 * a + d2 * v[i];
        next.b[i] = d1 * b + d2;
        next.p[i] = q2;
    }
    Ok((out, next))
}
