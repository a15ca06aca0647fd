//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] is a tape: every operation appends its result, so the node
//! list is already in topological order and [`Graph::backward`] simply walks
//! it in reverse. Parameters live outside the tape in a [`ParamSet`]; binding
//! one with [`Graph::param`] copies its value onto the tape, and `backward`
//! adds the resulting gradient into the parameter's slot.
//!
//! ```
//! use qrwkv::autodiff::{Graph, ParamSet, Tensor};
//!
//! let mut params = ParamSet::new();
//! let x = params.add("x", Tensor::vector(vec![1.0, 2.0])).unwrap();
//!
//! let mut g = Graph::new();
//! let xv = g.param(&params, x);
//! let sq = g.square(xv);
//! let loss = g.sum(sq);
//! g.backward(loss, &mut params).unwrap();
//!
//! assert_eq!(params.get(x).grad.as_ref().unwrap().data(), &[2.0, 4.0]);
//! ```
//!
//! Operations that the primitive set cannot express (the quantum circuit)
//! enter the tape through [`CustomOp`], which supplies its own backward.

mod graph;
mod tensor;

pub use graph::{CustomOp, Gradients, Graph, Var};
pub use tensor::{ParamId, ParamSet, Parameter, Tensor};
