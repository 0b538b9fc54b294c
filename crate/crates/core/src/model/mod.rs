//! Trainable components: a feed-forward encoder, the (C+1)-way classifier,
//! the sample projection head, and the prototype MLP that maps classifier
//! rows to tail-class and outlier-class prototypes.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointManifest, LayoutEntry};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ClassProfile;
use crate::error::{Error, Result};
use crate::ndcore::{Tape, Tensor, Var};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub input: usize,
    pub hidden: usize,
    pub feature: usize,
    pub proj_hidden: usize,
    pub proj: usize,
    /// Number of ID classes; the classifier has one more output.
    pub classes: usize,
}

impl ModelDims {
    pub fn new(input: usize, classes: usize) -> Self {
        Self {
            input,
            hidden: 64,
            feature: 64,
            proj_hidden: 64,
            proj: 32,
            classes,
        }
    }

    pub fn outputs(&self) -> usize {
        self.classes + 1
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn layout(&self) -> Vec<(&'static str, Vec<usize>)> {
        let d = self;
        vec![
            ("encoder.w1", vec![d.input, d.hidden]),
            ("encoder.b1", vec![1, d.hidden]),
            ("encoder.w2", vec![d.hidden, d.feature]),
            ("encoder.b2", vec![1, d.feature]),
            ("classifier.w", vec![d.outputs(), d.feature]),
            ("classifier.b", vec![1, d.outputs()]),
            ("projection.w1", vec![d.feature, d.proj_hidden]),
            ("projection.b1", vec![1, d.proj_hidden]),
            ("projection.w2", vec![d.proj_hidden, d.proj]),
            ("projection.b2", vec![1, d.proj]),
            ("prototype.w1", vec![d.feature, d.proj_hidden]),
            ("prototype.b1", vec![1, d.proj_hidden]),
            ("prototype.w2", vec![d.proj_hidden, d.proj]),
            ("prototype.b2", vec![1, d.proj]),
        ]
    }
}

// Indices into the storage order of `ModelDims::layout`.
const ENC_W1: usize = 0;
const ENC_B1: usize = 1;
const ENC_W2: usize = 2;
const ENC_B2: usize = 3;
pub const CLS_W: usize = 4;
const CLS_B: usize = 5;
const PROJ: usize = 6;
const PROTO: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    dims: ModelDims,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Uniform initialization in `±1/√fan_in`.
    pub fn init(dims: ModelDims, seed: u64) -> Self {
        let mut rng = stream(seed, 0x696e6974);
        let tensors = dims
            .layout()
            .into_iter()
            .map(|(name, shape)| {
                let fan_in = if name == "classifier.w" {
                    shape[1]
                } else if name.ends_with(".w1") || name.ends_with(".w2") {
                    shape[0]
                } else {
                    // biases share the fan-in of their weight
                    fan_in_of_bias(&dims, name)
                };
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n = shape.iter().product();
                let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
                Tensor::new(shape, values).expect("finite init")
            })
            .collect();
        Self { dims, tensors }
    }

    pub fn zeros(dims: ModelDims) -> Self {
        let tensors = dims.layout().into_iter().map(|(_, s)| Tensor::zeros(&s)).collect();
        Self { dims, tensors }
    }

    pub fn from_tensors(dims: ModelDims, tensors: Vec<Tensor>) -> Result<Self> {
        let layout = dims.layout();
        if layout.len() != tensors.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                layout.len(),
                tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&tensors) {
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: name,
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite {
                    index: 0,
                    context: format!("parameter {name}"),
                });
            }
        }
        Ok(Self { dims, tensors })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter as a leaf on `tape`.
    pub fn record(&self, tape: &mut Tape) -> ParamVars {
        ParamVars {
            dims: self.dims,
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Classifier logits without keeping a tape around.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.record(&mut tape);
        let xv = tape.leaf(x.clone());
        let f = p.encode(&mut tape, xv)?;
        let l = p.classify(&mut tape, f)?;
        Ok(tape.value(l).clone())
    }
}

fn fan_in_of_bias(dims: &ModelDims, name: &str) -> usize {
    match name {
        "encoder.b1" => dims.input,
        "encoder.b2" => dims.hidden,
        "classifier.b" => dims.feature,
        "projection.b1" | "prototype.b1" => dims.feature,
        _ => dims.proj_hidden,
    }
}

/// Parameters recorded on a tape; the forward passes below are
/// differentiable with respect to every one of them.
#[derive(Debug, Clone)]
pub struct ParamVars {
    dims: ModelDims,
    vars: Vec<Var>,
}

impl ParamVars {
    /// Wraps leaves recorded by the caller, in layout order.
    pub fn from_vars(dims: ModelDims, vars: Vec<Var>) -> Result<Self> {
        let want = dims.layout().len();
        if vars.len() != want {
            return Err(Error::invalid(format!("expected {want} parameter nodes, got {}", vars.len())));
        }
        Ok(Self { dims, vars })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn check_cols(tape: &Tape, x: Var, want: usize, op: &'static str) -> Result<()> {
        let got = tape.value(x).cols();
        if got != want || tape.value(x).shape().len() != 2 {
            return Err(Error::ShapeMismatch {
                op,
                lhs: vec![want],
                rhs: tape.value(x).shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Two ReLU layers: `[B x D_in] → [B x D_feat]`.
    pub fn encode(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Self::check_cols(tape, x, self.dims.input, "encode")?;
        let v = &self.vars;
        let h = tape.affine(x, v[ENC_W1], v[ENC_B1])?;
        let h = tape.relu(h);
        let f = tape.affine(h, v[ENC_W2], v[ENC_B2])?;
        Ok(tape.relu(f))
    }

    /// `[B x D_feat] → [B x (C+1)]` logits; the last column is the outlier class.
    pub fn classify(&self, tape: &mut Tape, features: Var) -> Result<Var> {
        Self::check_cols(tape, features, self.dims.feature, "classify")?;
        let wt = tape.transpose(self.vars[CLS_W])?;
        tape.affine(features, wt, self.vars[CLS_B])
    }

    fn mlp(&self, tape: &mut Tape, x: Var, base: usize) -> Result<Var> {
        let v = &self.vars;
        let h = tape.affine(x, v[base], v[base + 1])?;
        let h = tape.relu(h);
        tape.affine(h, v[base + 2], v[base + 3])
    }

    /// Projection head embeddings, ℓ2-normalized per row when `normalize`.
    pub fn project(&self, tape: &mut Tape, features: Var, normalize: bool) -> Result<Var> {
        Self::check_cols(tape, features, self.dims.feature, "project")?;
        let z = self.mlp(tape, features, PROJ)?;
        if normalize {
            tape.l2_normalize(z)
        } else {
            Ok(z)
        }
    }

    /// Unit-norm prototypes of the tail classes, one row per tail class in
    /// class order, derived from the classifier rows through the prototype MLP.
    pub fn tail_prototypes(&self, tape: &mut Tape, profile: &ClassProfile) -> Result<Var> {
        if profile.classes() != self.dims.classes {
            return Err(Error::invalid(format!(
                "profile has {} classes, model {}",
                profile.classes(),
                self.dims.classes
            )));
        }
        let tails: Vec<usize> = profile.tail_classes().collect();
        if tails.is_empty() {
            return Err(Error::invalid("no tail classes: tail fraction rounds to zero"));
        }
        let rows = tape.gather_rows(self.vars[CLS_W], &tails)?;
        let z = self.mlp(tape, rows, PROTO)?;
        tape.l2_normalize(z)
    }

    /// Unit-norm outlier-class prototype `[1 x D_proj]` from classifier row C+1.
    pub fn outlier_prototype(&self, tape: &mut Tape) -> Result<Var> {
        let row = tape.gather_rows(self.vars[CLS_W], &[self.dims.classes])?;
        let z = self.mlp(tape, row, PROTO)?;
        tape.l2_normalize(z)
    }
}
