use super::config::{Architecture, DecoderKind, EncoderKind, ModelConfig};
use super::ModelError;
use crate::autodiff::{Shape, Tape, Tensor, Var};
use std::collections::HashMap;

/// How a tensor is initialised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Dense weight; He-initialised with fan-in = rows.
    Weight,
    /// SiLU branch scale of a KAN edge.
    Beta,
    /// Spline branch scale of a KAN edge.
    Gamma,
    SplineCoef,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub role: ParamRole,
    pub tensor: Tensor,
}

/// Every learnable tensor of a model, in a fixed order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    params: Vec<Param>,
    index: HashMap<String, usize>,
}

impl ParameterSet {
    pub fn push(&mut self, name: impl Into<String>, role: ParamRole, tensor: Tensor) {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Param { name, role, tensor });
    }

    /// All-zero tensors with the shapes `config` needs for `n_t` antennas.
    pub fn zeros(config: &ModelConfig, n_t: usize) -> Self {
        let mut set = Self::default();
        for (name, role, shape) in layout(config, n_t) {
            set.push(name, role, Tensor::zeros(shape.rows, shape.cols));
        }
        set
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.params[i].tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.params[i].tensor)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.tensor.is_finite())
    }

    /// Checks names and shapes against what `config` expects.
    pub fn check_layout(&self, config: &ModelConfig, n_t: usize) -> Result<(), ModelError> {
        let want = layout(config, n_t);
        if want.len() != self.params.len() {
            return Err(ModelError::Layout(format!(
                "expected {} tensors, found {}",
                want.len(),
                self.params.len()
            )));
        }
        for ((name, _, shape), p) in want.iter().zip(&self.params) {
            if name != &p.name || *shape != p.tensor.shape() {
                return Err(ModelError::Layout(format!(
                    "expected {name} {shape}, found {} {}",
                    p.name,
                    p.tensor.shape()
                )));
            }
        }
        Ok(())
    }

    /// Places every tensor on `tape`, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams<'_> {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    tape.param(p.tensor.clone())
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect();
        BoundParams { set: self, vars }
    }
}

/// Tape handles for a [`ParameterSet`], in the same order.
#[derive(Debug)]
pub struct BoundParams<'a> {
    set: &'a ParameterSet,
    vars: Vec<Var>,
}

impl BoundParams<'_> {
    pub fn var(&self, name: &str) -> Result<Var, ModelError> {
        self.set
            .index_of(name)
            .map(|i| self.vars[i])
            .ok_or_else(|| ModelError::MissingParam(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Gradients in parameter order; untouched tensors get zeros.
    pub fn take_grads(&self, tape: &mut Tape) -> Vec<Vec<f64>> {
        self.vars
            .iter()
            .zip(self.set.iter())
            .map(|(&v, p)| tape.take_grad(v).unwrap_or_else(|| vec![0.0; p.tensor.len()]))
            .collect()
    }
}

/// Parameter names, roles and shapes for a configuration. Only the flat
/// MLP depends on the user count.
pub fn layout(config: &ModelConfig, n_t: usize) -> Vec<(String, ParamRole, Shape)> {
    use ParamRole::*;
    let mut out = Vec::new();
    let mut push = |name: String, role, rows, cols| out.push((name, role, Shape::new(rows, cols)));
    match config.architecture {
        Architecture::PlainMlp { users } => {
            let io = 2 * users * n_t;
            let mut dims = vec![io];
            dims.extend(&config.mlp_hidden);
            dims.push(io);
            for (t, w) in dims.windows(2).enumerate() {
                push(format!("fc{t}.w"), Weight, w[0], w[1]);
            }
        }
        Architecture::EncoderDecoder => {
            let d = config.d;
            push("w0".into(), Weight, 2 * n_t, d);
            for l in 0..config.l_layers {
                match config.encoder_kind {
                    EncoderKind::Transformer => {
                        for w in ["wq", "wk", "wv", "wma"] {
                            push(format!("tel{l}.{w}"), Weight, d, d);
                        }
                        push(format!("tel{l}.w1"), Weight, d, config.d_ff);
                        push(format!("tel{l}.w2"), Weight, config.d_ff, d);
                    }
                    EncoderKind::Gat => {
                        let m = config.heads[l];
                        push(format!("gat{l}.w"), Weight, d, d);
                        push(format!("gat{l}.a_src"), Weight, d / m, m);
                        push(format!("gat{l}.a_dst"), Weight, d / m, m);
                    }
                }
            }
            let dims = config.decoder_dims(n_t);
            for (t, w) in dims.windows(2).enumerate() {
                let (fin, fout) = (w[0], w[1]);
                match config.decoder_kind {
                    DecoderKind::Kan => {
                        push(format!("kdl{t}.beta"), Beta, fin, fout);
                        push(format!("kdl{t}.gamma"), Gamma, fin, fout);
                        push(format!("kdl{t}.coef"), SplineCoef, fin * config.spline_count, fout);
                    }
                    DecoderKind::Mlp => push(format!("mlp{t}.w"), Weight, fin, fout),
                }
            }
        }
    }
    out
}
