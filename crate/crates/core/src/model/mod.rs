//! RWKV forecaster over a scalar waveform.
//!
//! ```text
//! x₀ = emb(series)                       [B×T×C]
//! aₗ = TimeMix(LN(xₗ))
//! xₗ₊₁ = xₗ + aₗ + ChannelMix(LN(xₗ + aₗ))
//! ŷ = head(LN(x_L))                       [B×T×1]
//! ```
//!
//! `ChannelMix` is the gated squared-ReLU FFN, optionally summed with the
//! projected expectations of the variational circuit before gating. The
//! prediction at position `t` estimates the series value at `t + 1`.

mod block;
mod channel_mix;
pub mod checkpoint;
mod config;
mod time_mix;
mod wkv;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use block::{block_forward, BlockVars};
pub use channel_mix::{channel_mix_classical, channel_mix_quantum, ChannelMixVars, QuantumVars};
pub use config::{ModelConfig, Variant};
pub use time_mix::{time_mix, TimeMixVars};
pub use wkv::{wkv_step, WkvState};

use crate::autodiff::{Graph, ParamId, ParamSet, Tensor, Var};
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct TimeMixIds {
    wk: ParamId,
    wv: ParamId,
    wr: ParamId,
    wo: ParamId,
    u: ParamId,
    w_raw: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct QuantumIds {
    wq: ParamId,
    wo: ParamId,
    phi: ParamId,
}

#[derive(Debug, Clone, Copy)]
struct ChannelMixIds {
    w1: ParamId,
    w2: ParamId,
    wr: ParamId,
    quantum: Option<QuantumIds>,
}

#[derive(Debug, Clone, Copy)]
struct BlockIds {
    ln1: NormIds,
    time: TimeMixIds,
    ln2: NormIds,
    channel: ChannelMixIds,
}

#[derive(Debug, Clone)]
struct Layout {
    emb_w: ParamId,
    emb_b: ParamId,
    ln0: Option<NormIds>,
    blocks: Vec<BlockIds>,
    ln_out: NormIds,
    head_w: ParamId,
    head_b: ParamId,
}

/// Recurrent state carried between chunks: one [`WkvState`] per block.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub layers: Vec<WkvState>,
}

/// Model parameters bound to one graph.
pub struct ModelVars {
    emb_w: Var,
    emb_b: Var,
    ln0: Option<(Var, Var)>,
    pub blocks: Vec<BlockVars>,
    ln_out: (Var, Var),
    head_w: Var,
    head_b: Var,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect())
        .expect("shape matches buffer")
}

/// Per-channel `w_raw` so that all channels of one head share a decay whose
/// half-life is spaced geometrically between 1 and `max_half_life` across heads.
pub fn decay_init(n_embd: usize, n_head: usize, max_half_life: f64) -> Vec<f64> {
    let per_head = n_embd / n_head;
    (0..n_embd)
        .map(|c| {
            let h = c / per_head;
            let frac = if n_head > 1 {
                h as f64 / (n_head - 1) as f64
            } else {
                0.5
            };
            let half_life = max_half_life.powf(frac);
            // e^{w_eff·h} = 1/2 with w_eff = −exp(w_raw)
            (std::f64::consts::LN_2 / half_life).ln()
        })
        .collect()
}

impl Model {
    /// Fresh model with parameters drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Quantum-only parameters come from their own stream so both variants
        // share every other initial value for the same seed.
        let mut qrng = ChaCha8Rng::seed_from_u64(seed);
        qrng.set_stream(1);
        let c = config.n_embd;
        let d = config.n_intermediate;
        let bound = 1.0 / (c as f64).sqrt();
        let mut params = ParamSet::new();
        let norm = |params: &mut ParamSet, prefix: &str| -> Result<NormIds> {
            Ok(NormIds {
                gain: params.add(format!("{prefix}.gain"), Tensor::full([c], 1.0))?,
                bias: params.add(format!("{prefix}.bias"), Tensor::zeros([c]))?,
            })
        };
        let emb_w = params.add("emb.weight", uniform(&mut rng, &[1, c], -1.0, 1.0))?;
        let emb_b = params.add("emb.bias", uniform(&mut rng, &[c], -1.0, 1.0))?;
        let ln0 = if config.input_norm {
            Some(norm(&mut params, "ln0")?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(config.n_layer);
        for l in 0..config.n_layer {
            let p = format!("blocks.{l}");
            let ln1 = norm(&mut params, &format!("{p}.ln1"))?;
            let mut proj = |params: &mut ParamSet, name: &str, shape: [usize; 2]| {
                params.add(format!("{p}.{name}"), uniform(&mut rng, &shape, -bound, bound))
            };
            let wk = proj(&mut params, "att.key", [c, c])?;
            let wv = proj(&mut params, "att.value", [c, c])?;
            let wr = proj(&mut params, "att.receptance", [c, c])?;
            let wo = proj(&mut params, "att.output", [c, c])?;
            let u = params.add(format!("{p}.att.time_first"), Tensor::zeros([c]))?;
            let w_raw = params.add(
                format!("{p}.att.time_decay"),
                Tensor::vector(decay_init(c, config.n_head, config.max_half_life)),
            )?;
            let time = TimeMixIds {
                wk,
                wv,
                wr,
                wo,
                u,
                w_raw,
            };
            let ln2 = norm(&mut params, &format!("{p}.ln2"))?;
            let mut proj = |params: &mut ParamSet, name: &str, shape: [usize; 2]| {
                params.add(format!("{p}.{name}"), uniform(&mut rng, &shape, -bound, bound))
            };
            let w1 = proj(&mut params, "ffn.key", [c, d])?;
            let w2 = proj(&mut params, "ffn.value", [d, c])?;
            let wr = proj(&mut params, "ffn.receptance", [c, c])?;
            let quantum = match config.variant {
                Variant::Classical => None,
                Variant::Quantum => {
                    let n = config.n_qubits;
                    let wq = params.add(
                        format!("{p}.ffn.q_in"),
                        uniform(&mut qrng, &[c, n], -bound, bound),
                    )?;
                    let wo = params.add(
                        format!("{p}.ffn.q_out"),
                        uniform(&mut qrng, &[n, c], -bound, bound),
                    )?;
                    let phi = params.add(
                        format!("{p}.ffn.q_weights"),
                        uniform(
                            &mut qrng,
                            &[config.q_depth, n],
                            0.0,
                            2.0 * std::f64::consts::PI,
                        ),
                    )?;
                    Some(QuantumIds { wq, wo, phi })
                }
            };
            blocks.push(BlockIds {
                ln1,
                time,
                ln2,
                channel: ChannelMixIds {
                    w1,
                    w2,
                    wr,
                    quantum,
                },
            });
        }
        let ln_out = norm(&mut params, "ln_out")?;
        let head_w = params.add("head.weight", uniform(&mut rng, &[c, 1], -bound, bound))?;
        let head_b = params.add("head.bias", Tensor::zeros([1]))?;
        Ok(Self {
            config,
            params,
            layout: Layout {
                emb_w,
                emb_b,
                ln0,
                blocks,
                ln_out,
                head_w,
                head_b,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Overwrites every parameter whose name and shape also appear in `src`.
    /// Returns how many were copied.
    pub fn copy_shared_params(&mut self, src: &ParamSet) -> usize {
        let mut copied = 0;
        for p in self.params.iter_mut() {
            if let Some(s) = src.by_name(&p.name) {
                if s.value.shape() == p.value.shape() {
                    p.value = s.value.clone();
                    copied += 1;
                }
            }
        }
        copied
    }

    pub fn empty_state(&self, batch: usize) -> ModelState {
        ModelState {
            layers: (0..self.config.n_layer)
                .map(|_| WkvState::empty(batch, self.config.n_embd))
                .collect(),
        }
    }

    /// Binds every parameter to `g`.
    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        let p = &self.params;
        let l = &self.layout;
        let norm = |g: &mut Graph, n: NormIds| (g.param(p, n.gain), g.param(p, n.bias));
        let emb_w = g.param(p, l.emb_w);
        let emb_b = g.param(p, l.emb_b);
        let ln0 = l.ln0.map(|n| norm(g, n));
        let blocks = l
            .blocks
            .iter()
            .map(|b| BlockVars {
                ln1: norm(g, b.ln1),
                time: TimeMixVars {
                    wk: g.param(p, b.time.wk),
                    wv: g.param(p, b.time.wv),
                    wr: g.param(p, b.time.wr),
                    wo: g.param(p, b.time.wo),
                    u: g.param(p, b.time.u),
                    w_raw: g.param(p, b.time.w_raw),
                },
                ln2: norm(g, b.ln2),
                channel: ChannelMixVars {
                    w1: g.param(p, b.channel.w1),
                    w2: g.param(p, b.channel.w2),
                    wr: g.param(p, b.channel.wr),
                    quantum: b.channel.quantum.map(|q| QuantumVars {
                        wq: g.param(p, q.wq),
                        wo: g.param(p, q.wo),
                        phi: g.param(p, q.phi),
                    }),
                },
            })
            .collect();
        let ln_out = norm(g, l.ln_out);
        let head_w = g.param(p, l.head_w);
        let head_b = g.param(p, l.head_b);
        ModelVars {
            emb_w,
            emb_b,
            ln0,
            blocks,
            ln_out,
            head_w,
            head_b,
        }
    }

    /// Records the full forward pass of a `[B×T×1]` window on `g`.
    pub fn forward(
        &self,
        g: &mut Graph,
        series: Var,
        state: Option<&ModelState>,
    ) -> Result<(Var, ModelState)> {
        let vars = self.bind(g);
        model_forward(g, &vars, series, state)
    }

    /// Inference on a `[B×T×1]` tensor without keeping a graph.
    pub fn predict(&self, series: &Tensor, state: Option<&ModelState>) -> Result<(Tensor, ModelState)> {
        let mut g = Graph::new();
        let x = g.constant(series.clone());
        let (y, s) = self.forward(&mut g, x, state)?;
        Ok((g.tensor(y), s))
    }

    /// Convenience: next-step predictions for one series.
    pub fn predict_series(&self, series: &[f64]) -> Result<Vec<f64>> {
        let t = Tensor::new([1, series.len(), 1], series.to_vec())?;
        Ok(self.predict(&t, None)?.0.into_data())
    }
}

/// Input projection, blocks, final norm and head.
pub fn model_forward(
    g: &mut Graph,
    vars: &ModelVars,
    series: Var,
    state: Option<&ModelState>,
) -> Result<(Var, ModelState)> {
    let s = g.shape(series).to_vec();
    if s.len() != 3 || s[2] != 1 {
        return Err(Error::Shape(format!(
            "model input must be [B×T×1], got {s:?}"
        )));
    }
    if let Some(st) = state {
        if st.layers.len() != vars.blocks.len() {
            return Err(Error::Shape(format!(
                "state has {} layers, model has {}",
                st.layers.len(),
                vars.blocks.len()
            )));
        }
    }
    let proj = g.matmul(series, vars.emb_w)?;
    let mut x = g.add(proj, vars.emb_b)?;
    if let Some((gain, bias)) = vars.ln0 {
        x = g.layer_norm(x, gain, bias, LN_EPS)?;
    }
    let mut layers = Vec::with_capacity(vars.blocks.len());
    for (i, b) in vars.blocks.iter().enumerate() {
        let (next, st) = block_forward(g, x, b, state.map(|s| &s.layers[i]))?;
        x = next;
        layers.push(st);
    }
    let h = g.layer_norm(x, vars.ln_out.0, vars.ln_out.1, LN_EPS)?;
    let y = g.matmul(h, vars.head_w)?;
    let y = g.add(y, vars.head_b)?;
    Ok((y, ModelState { layers }))
}

#[cfg(test)]
mod tests;
