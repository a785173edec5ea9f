use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::{Activation, ModelError, ObsNodeConfig};
use crate::autodiff::{AutodiffError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::math;
use crate::odeint::VectorField;

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Debug)]
struct Layout {
    phi: Vec<Vec<Dense>>,
    enc_wx: ParamId,
    enc_uzr: ParamId,
    enc_uh: ParamId,
    enc_b: ParamId,
    impute_b: ParamId,
    head: Dense,
}

/// An ObsNODE model: configuration plus its trainable parameters.
#[derive(Clone, Debug)]
pub struct ObsNode {
    config: ObsNodeConfig,
    pub store: ParamStore,
    layout: Layout,
}

/// Input width of φ-block `i` (1-based): blocks `1..=i` of `z` plus `a`.
pub fn phi_input_dim(config: &ObsNodeConfig, i: usize) -> usize {
    i * config.d_y + config.d_a
}

fn phi_dims(config: &ObsNodeConfig, i: usize) -> Vec<usize> {
    let mut dims = vec![phi_input_dim(config, i)];
    dims.extend(core::iter::repeat_n(config.phi_hidden_dim, config.phi_layers));
    dims.push(config.d_y);
    dims
}

impl ObsNode {
    /// All-zero parameters; the usual target for loading a checkpoint.
    pub fn zeros(config: ObsNodeConfig) -> Result<Self, ModelError> {
        config.validate().map_err(ModelError::Config)?;
        let mut store = ParamStore::new();
        let h = config.encoder_hidden_dim;
        let mut phi = Vec::with_capacity(config.m);
        for i in 1..=config.m {
            let dims = phi_dims(&config, i);
            let layers = dims
                .windows(2)
                .enumerate()
                .map(|(k, w)| Dense {
                    w: store.add(format!("phi.{i}.layer{k}.weight"), Tensor::zeros(&[w[0], w[1]])),
                    b: store.add(format!("phi.{i}.layer{k}.bias"), Tensor::zeros(&[1, w[1]])),
                })
                .collect();
            phi.push(layers);
        }
        let layout = Layout {
            phi,
            enc_wx: store.add("encoder.wx", Tensor::zeros(&[config.encoder_input_dim(), 3 * h])),
            enc_uzr: store.add("encoder.uzr", Tensor::zeros(&[h, 2 * h])),
            enc_uh: store.add("encoder.uh", Tensor::zeros(&[h, h])),
            enc_b: store.add("encoder.bias", Tensor::zeros(&[1, 3 * h])),
            impute_b: store.add("impute.b", Tensor::zeros(&[1, config.d_y])),
            head: Dense {
                w: store.add("head.weight", Tensor::zeros(&[h, config.d_z()])),
                b: store.add("head.bias", Tensor::zeros(&[1, config.d_z()])),
            },
        };
        Ok(ObsNode { config, store, layout })
    }

    /// Glorot-uniform weights and zero biases. The last layer of every φ-block
    /// starts small so the initial field is close to a chain of integrators.
    pub fn init<R: Rng + ?Sized>(config: ObsNodeConfig, rng: &mut R) -> Result<Self, ModelError> {
        let mut model = ObsNode::zeros(config)?;
        let mut weights: Vec<(ParamId, f64)> = Vec::new();
        for block in &model.layout.phi {
            for (k, layer) in block.iter().enumerate() {
                let gain = if k + 1 == block.len() { 0.1 } else { 1.0 };
                weights.push((layer.w, gain));
            }
        }
        weights.push((model.layout.enc_wx, 1.0));
        weights.push((model.layout.enc_uzr, 1.0));
        weights.push((model.layout.enc_uh, 1.0));
        weights.push((model.layout.head.w, 1.0));
        for (id, gain) in weights {
            let t = model.store.value_mut(id);
            let (fan_in, fan_out) = (t.shape()[0] as f64, t.shape()[1] as f64);
            let limit = gain * math::sqrt(6.0 / (fan_in + fan_out));
            for v in t.values_mut() {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(model)
    }

    pub fn config(&self) -> &ObsNodeConfig {
        &self.config
    }

    pub fn impute_constants(&self) -> &[f64] {
        self.store.value(self.layout.impute_b).values()
    }

    /// Binds every parameter to `tape` for a batch of `rows` units. Biases are
    /// tiled to `rows` once here rather than at every use. With `grad = false`
    /// the parameters are recorded as constants.
    pub fn bind(&self, tape: &mut Tape, rows: usize, grad: bool) -> Result<Bound, ModelError> {
        if rows == 0 {
            return Err(ModelError::Dimension {
                what: "batch rows",
                expected: 1,
                got: 0,
            });
        }
        let mut p = |id: ParamId| {
            if grad {
                tape.param(&self.store, id)
            } else {
                tape.param_detached(&self.store, id)
            }
        };
        let phi_raw: Vec<Vec<(Var, Var)>> = self
            .layout
            .phi
            .iter()
            .map(|block| block.iter().map(|l| (p(l.w), p(l.b))).collect())
            .collect();
        let raw = [
            p(self.layout.enc_wx),
            p(self.layout.enc_uzr),
            p(self.layout.enc_uh),
            p(self.layout.enc_b),
            p(self.layout.impute_b),
            p(self.layout.head.w),
            p(self.layout.head.b),
        ];
        let mut phi = Vec::with_capacity(phi_raw.len());
        for block in phi_raw {
            let mut layers = Vec::with_capacity(block.len());
            for (w, b) in block {
                layers.push((w, tape.repeat_rows(b, rows)?));
            }
            phi.push(layers);
        }
        Ok(Bound {
            rows,
            phi,
            enc_wx: raw[0],
            enc_uzr: raw[1],
            enc_uh: raw[2],
            enc_b: tape.repeat_rows(raw[3], rows)?,
            impute_b: tape.repeat_rows(raw[4], rows)?,
            head_w: raw[5],
            head_b: tape.repeat_rows(raw[6], rows)?,
        })
    }

    /// The triangular right-hand side for a `[rows, d_z]` state and a
    /// `[rows, d_a]` control.
    pub fn triangular_rhs(&self, tape: &mut Tape, bound: &Bound, z: Var, a: Var) -> Result<Var, ModelError> {
        let c = &self.config;
        self.check_cols(tape, z, c.d_z(), "state")?;
        self.check_cols(tape, a, c.d_a, "treatment")?;
        let mut blocks = Vec::with_capacity(c.m);
        for i in 1..=c.m {
            let phi = self.phi(tape, bound, i, z, a)?;
            if i < c.m {
                let next = tape.slice(z, 1, i * c.d_y, c.d_y)?;
                blocks.push(tape.add(next, phi)?);
            } else {
                blocks.push(phi);
            }
        }
        if blocks.len() == 1 {
            Ok(blocks[0])
        } else {
            Ok(tape.concat(&blocks, 1)?)
        }
    }

    /// φ-block `i` (1-based) evaluated on `z^(1..i)` and `a`.
    pub fn phi(&self, tape: &mut Tape, bound: &Bound, i: usize, z: Var, a: Var) -> Result<Var, ModelError> {
        let c = &self.config;
        let head = tape.slice(z, 1, 0, i * c.d_y)?;
        let mut x = tape.concat(&[head, a], 1)?;
        let layers = &bound.phi[i - 1];
        for (k, &(w, b)) in layers.iter().enumerate() {
            let lin = tape.matmul(x, w)?;
            x = tape.add(lin, b)?;
            if k + 1 < layers.len() {
                x = match c.phi_activation {
                    Activation::Tanh => tape.tanh(x)?,
                    Activation::LeakyRelu => tape.leaky_relu(x)?,
                    Activation::Sigmoid => tape.sigmoid(x)?,
                };
            }
        }
        Ok(x)
    }

    /// Observed part of the state: the first block.
    pub fn emit(&self, tape: &mut Tape, z: Var) -> Result<Var, ModelError> {
        self.check_cols(tape, z, self.config.d_z(), "state")?;
        Ok(tape.slice(z, 1, 0, self.config.d_y)?)
    }

    /// One gated recurrent update on `[rows, in]` inputs.
    pub(crate) fn gru_step(&self, tape: &mut Tape, bound: &Bound, x: Var, h: Var) -> Result<Var, AutodiffError> {
        let hd = self.config.encoder_hidden_dim;
        let gx = tape.matmul(x, bound.enc_wx)?;
        let gx = tape.add(gx, bound.enc_b)?;
        let gh = tape.matmul(h, bound.enc_uzr)?;
        let gx_zr = tape.slice(gx, 1, 0, 2 * hd)?;
        let zr = tape.add(gx_zr, gh)?;
        let zr = tape.sigmoid(zr)?;
        let u = tape.slice(zr, 1, 0, hd)?;
        let r = tape.slice(zr, 1, hd, hd)?;
        let rh = tape.hadamard(r, h)?;
        let rh = tape.matmul(rh, bound.enc_uh)?;
        let gx_h = tape.slice(gx, 1, 2 * hd, hd)?;
        let cand = tape.add(gx_h, rh)?;
        let cand = tape.tanh(cand)?;
        let diff = tape.sub(cand, h)?;
        let step = tape.hadamard(u, diff)?;
        tape.add(h, step)
    }

    pub(crate) fn head(&self, tape: &mut Tape, bound: &Bound, h: Var) -> Result<Var, AutodiffError> {
        let z = tape.matmul(h, bound.head_w)?;
        tape.add(z, bound.head_b)
    }

    fn check_cols(&self, tape: &Tape, v: Var, expected: usize, what: &'static str) -> Result<(), ModelError> {
        let shape = tape.shape(v);
        if shape.len() != 2 || shape[1] != expected {
            return Err(ModelError::Dimension {
                what,
                expected,
                got: *shape.last().unwrap_or(&0),
            });
        }
        Ok(())
    }
}

/// Parameters of an [`ObsNode`] recorded on one tape for a fixed batch size.
#[derive(Clone, Debug)]
pub struct Bound {
    pub rows: usize,
    phi: Vec<Vec<(Var, Var)>>,
    pub(crate) enc_wx: Var,
    pub(crate) enc_uzr: Var,
    pub(crate) enc_uh: Var,
    pub(crate) enc_b: Var,
    pub(crate) impute_b: Var,
    pub(crate) head_w: Var,
    pub(crate) head_b: Var,
}

/// The triangular field of a bound model, usable with the integrators.
pub struct Field<'a> {
    pub model: &'a ObsNode,
    pub bound: &'a Bound,
}

impl VectorField for Field<'_> {
    fn eval(&self, tape: &mut Tape, z: Var, a: Var) -> Result<Var, AutodiffError> {
        self.model.triangular_rhs(tape, self.bound, z, a).map_err(|e| match e {
            ModelError::Autodiff(inner) => inner,
            _ => AutodiffError::InvalidArgument("state or treatment width mismatch"),
        })
    }
}

/// `ỹ = y·I + b·(1−I)` on plain slices.
pub fn impute(y: &[f64], mask: &[bool], b: &[f64]) -> Vec<f64> {
    y.iter()
        .zip(mask)
        .zip(b)
        .map(|((&y, &m), &b)| if m { y } else { b })
        .collect()
}
