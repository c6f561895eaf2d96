//! MLP building block: registration and application of affine stacks.

use rand_chacha::ChaCha8Rng;

use super::params::{Binding, Init, ParamStore};
use super::{DiffError, DiffResult, Tape, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
    Sigmoid,
}

/// Layer widths (input first), activation between layers, dropout on hidden
/// activations. `activate_output` applies the activation after the last
/// affine as well.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub activate_output: bool,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation, dropout: f64) -> Self {
        assert!(widths.len() >= 2, "an MLP needs at least one layer");
        assert!((0.0..1.0).contains(&dropout));
        Self {
            widths,
            activation,
            dropout,
            activate_output: false,
        }
    }

    pub fn with_activated_output(mut self) -> Self {
        self.activate_output = true;
        self
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }
}

/// Register `<prefix>.w{i}` / `<prefix>.b{i}` parameters for an MLP.
pub fn register_mlp<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    spec: &MlpSpec,
    rng: &mut ChaCha8Rng,
) {
    for i in 0..spec.layer_count() {
        let (fan_in, fan_out) = (spec.widths[i], spec.widths[i + 1]);
        store.register(
            &format!("{prefix}.w{i}"),
            fan_out,
            fan_in,
            Init::UniformFanIn { fan_in },
            rng,
        );
        store.register(&format!("{prefix}.b{i}"), 1, fan_out, Init::Zeros, rng);
    }
}

fn activate<T: Scalar>(tape: &Tape<T>, x: Var, act: Activation) -> Var {
    match act {
        Activation::Silu => tape.silu(x),
        Activation::Identity => x,
        Activation::Sigmoid => tape.sigmoid(x),
    }
}

/// Apply an MLP row-wise: x (n×in) → (n×out). Dropout acts on hidden
/// activations only, and only when `train` is set.
pub fn mlp_apply<T: Scalar>(
    tape: &Tape<T>,
    spec: &MlpSpec,
    binding: &Binding,
    prefix: &str,
    x: Var,
    train: bool,
) -> DiffResult<Var> {
    let (_, cols) = tape.shape(x);
    if cols != spec.input_width() {
        return Err(DiffError::Shape {
            op: "mlp_apply",
            detail: format!("input width {} but spec expects {}", cols, spec.input_width()),
        });
    }
    let mut h = x;
    for i in 0..spec.layer_count() {
        let w = binding.var(&format!("{prefix}.w{i}"))?;
        let b = binding.var(&format!("{prefix}.b{i}"))?;
        h = tape.affine(h, w, b)?;
        let last = i + 1 == spec.layer_count();
        if !last || spec.activate_output {
            h = activate(tape, h, spec.activation);
        }
        if !last {
            h = tape.dropout(h, spec.dropout, train)?;
        }
    }
    Ok(h)
}
