use super::channel_mix::{channel_mix_classical, channel_mix_quantum, ChannelMixVars};
use super::time_mix::{time_mix, TimeMixVars};
use super::wkv::WkvState;
use super::LN_EPS;
use crate::autodiff::{Graph, Var};
use crate::error::Result;

/// One block's parameters bound to a graph.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ln1: (Var, Var),
    pub time: TimeMixVars,
    pub ln2: (Var, Var),
    pub channel: ChannelMixVars,
}

/// `a = TimeMix(LN₁(x))`, `x' = x + a + ChannelMix(LN₂(x + a))`.
///
/// The quantum channel mix is used whenever the block carries quantum parameters.
pub fn block_forward(
    g: &mut Graph,
    x: Var,
    p: &BlockVars,
    state: Option<&WkvState>,
) -> Result<(Var, WkvState)> {
    let h = g.layer_norm(x, p.ln1.0, p.ln1.1, LN_EPS)?;
    let (a, st) = time_mix(g, h, &p.time, state)?;
    let xa = g.add(x, a)?;
    let h2 = g.layer_norm(xa, p.ln2.0, p.ln2.1, LN_EPS)?;
    let c = if p.channel.quantum.is_some() {
        channel_mix_quantum(g, h2, &p.channel)?
    } else {
        channel_mix_classical(g, h2, &p.channel)?
    };
    Ok((g.add(xa, c)?, st))
}
