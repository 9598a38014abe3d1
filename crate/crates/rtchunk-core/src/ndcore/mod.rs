//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! The primitive set is deliberately closed and small: add, mul, matmul,
//! affine, tanh, sum-all and a constant-mask where. Everything else is
//! composed from those, which keeps the adjoint rules auditable against
//! finite differences.

mod tape;
mod tensor;

pub use tape::{Tape, Var};
pub use tensor::Tensor;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("non-finite value produced by op `{op}` at tape index {index}")]
    NonFinite { op: &'static str, index: usize },
    #[error("domain error: {0}")]
    Domain(String),
}

/// Gradient of a scalar-valued function at `x`.
///
/// `f` receives a fresh tape and the variable holding `x`, and must return
/// a scalar (single-element) variable built from tape primitives.
pub fn grad<F>(f: F, x: &Tensor) -> Result<Tensor, NdError>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var, NdError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let y = f(&mut tape, xv)?;
    if tape.value(y).len() != 1 {
        return Err(NdError::Shape(format!(
            "grad needs a scalar-valued function, got output shape {:?}",
            tape.value(y).shape()
        )));
    }
    tape.backward(y)?;
    Ok(tape.grad_or_zero(xv))
}

/// Vector-Jacobian product: cotangentᵀ · ∂g/∂x, shaped like `x`.
pub fn vjp<G>(g: G, x: &Tensor, cotangent: &Tensor) -> Result<Tensor, NdError>
where
    G: FnOnce(&mut Tape, Var) -> Result<Var, NdError>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone())?;
    let y = g(&mut tape, xv)?;
    if tape.value(y).shape() != cotangent.shape() {
        return Err(NdError::Shape(format!(
            "cotangent shape {:?} does not match output shape {:?}",
            cotangent.shape(),
            tape.value(y).shape()
        )));
    }
    tape.backward_seeded(y, cotangent)?;
    Ok(tape.grad_or_zero(xv))
}
