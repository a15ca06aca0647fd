//! QuantumRWKV: an attention-free RWKV forecaster whose channel mixing can
//! carry a simulated variational quantum circuit, together with the
//! synthetic benchmark suite and training harness used to compare it with
//! the purely classical model.
//!
//! * [`autodiff`]: tape-based reverse-mode differentiation over `f64` tensors.
//! * [`qsim`]: state-vector circuit simulator with parameter-shift gradients.
//! * [`model`]: time mixing, classical and quantum channel mixing, blocks.
//! * [`tasks`]: the ten seeded series generators and dataset windowing.
//! * [`train`]: Adam, metrics, training runs and the quantum-vs-classical flag.
//! * [`verify`]: independent oracles and the self-check suite.
//!
//! The guide in `book/` walks through each piece; its code samples are
//! compiled and run as doctests of this crate.

pub mod alloc;
pub mod autodiff;
mod error;
pub mod model;
pub mod qsim;
pub mod tasks;
pub mod train;
pub mod verify;

pub use error::{Error, Result, Shape};

macro_rules! book_chapters {
    ($($name:ident => $file:literal),* $(,)?) => {
        $(
            #[cfg(doctest)]
            #[doc = include_str!(concat!("../../../book/src/", $file))]
            mod $name {}
        )*
    };
}

book_chapters! {
    book_intro => "introduction.md",
    book_autodiff => "autodiff.md",
    book_circuit => "circuit.md",
    book_time_mixing => "time-mixing.md",
    book_channel_mixing => "channel-mixing.md",
    book_tasks => "tasks.md",
    book_training => "training.md",
    book_cli => "cli.md",
}
