use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Classical,
    Quantum,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Classical, Variant::Quantum];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Classical => "classical",
            Variant::Quantum => "quantum",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "classical" => Ok(Variant::Classical),
            "quantum" => Ok(Variant::Quantum),
            _ => Err(Error::Config(format!(
                "unknown variant {s:?}; expected classical or quantum"
            ))),
        }
    }
}

fn one() -> usize {
    1
}

fn default_half_life() -> f64 {
    16.0
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_embd: usize,
    pub n_layer: usize,
    pub n_intermediate: usize,
    pub n_head: usize,
    pub n_qubits: usize,
    pub q_depth: usize,
    pub variant: Variant,
    #[serde(default = "one")]
    pub input_dim: usize,
    #[serde(default = "one")]
    pub output_dim: usize,
    /// LayerNorm directly after the input projection.
    #[serde(default)]
    pub input_norm: bool,
    /// Longest decay half-life (in steps) used when initializing `w_raw`.
    #[serde(default = "default_half_life")]
    pub max_half_life: f64,
}

impl ModelConfig {
    /// n_embd 32, 2 layers, FFN width 128, 4 heads, 4 qubits, depth 2.
    pub fn desk(variant: Variant) -> Self {
        Self {
            n_embd: 32,
            n_layer: 2,
            n_intermediate: 128,
            n_head: 4,
            n_qubits: 4,
            q_depth: 2,
            variant,
            input_dim: 1,
            output_dim: 1,
            input_norm: false,
            max_half_life: 16.0,
        }
    }

    /// n_embd 768, 6 layers, FFN width 3072, 12 heads, 4 qubits, depth 2.
    pub fn paper(variant: Variant) -> Self {
        Self {
            n_embd: 768,
            n_layer: 6,
            n_intermediate: 3072,
            n_head: 12,
            ..Self::desk(variant)
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_embd == 0 || self.n_layer == 0 {
            return bad("n_embd and n_layer must be positive".into());
        }
        if self.n_head == 0 || self.n_embd % self.n_head != 0 {
            return bad(format!(
                "n_head {} must divide n_embd {}",
                self.n_head, self.n_embd
            ));
        }
        if self.n_intermediate < self.n_embd {
            return bad(format!(
                "n_intermediate {} is smaller than n_embd {}",
                self.n_intermediate, self.n_embd
            ));
        }
        if self.variant == Variant::Quantum
            && (self.n_qubits == 0 || self.n_qubits > crate::qsim::MAX_QUBITS)
        {
            return bad(format!(
                "quantum variant needs 1..={} qubits, got {}",
                crate::qsim::MAX_QUBITS,
                self.n_qubits
            ));
        }
        if self.input_dim != 1 || self.output_dim != 1 {
            return bad("only waveform input (input_dim = output_dim = 1) is supported".into());
        }
        if !(self.max_half_life >= 1.0) {
            return bad(format!("max_half_life {} must be ≥ 1", self.max_half_life));
        }
        Ok(())
    }
}
