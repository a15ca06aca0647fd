//! Reference implementations used to check the fast paths, and the suite
//! behind `qrwkv verify`.
//!
//! The oracles here deliberately share no code with what they check: the
//! circuit oracle multiplies dense Kronecker-product operators, the WKV
//! oracle sums raw exponentials, and gradients are compared against central
//! finite differences.

pub mod dense_circuit;
pub mod finite_diff;
mod suite;
pub mod wkv_closed_form;

pub use suite::{
    causality_holds, circuit_oracle_gaps, gradient_check_config, model_gradient_check,
    nulled_equivalence_gap, run_suite, single_qubit_gaps, streaming_gap, wkv_oracle_gap,
    CheckOutcome, GradientReport,
};
