//! Beamforming networks.
//!
//! [`Model`] chains pre-processing, `L` encoder layers (transformer or GAT),
//! `T` decoder layers (KAN or MLP) and the power-budget projection. The
//! parameter shapes depend only on `n_t` and the [`ModelConfig`], so one
//! trained model accepts any number of users. The flat-MLP baseline is the
//! exception and rejects inputs whose user count differs from its build.

mod checkpoint;
mod config;
pub mod layers;
mod params;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointError};
pub use config::{parse_kv, Architecture, DecoderKind, EncoderKind, ModelConfig};
pub use params::{layout, BoundParams, Param, ParamRole, ParameterSet};

use crate::autodiff::{AutodiffError, KnotGrid, Tape, Var};
use crate::sysmodel::{BeamformingMatrix, ChannelSample};
use layers::{GatParams, KdlParams, TelParams};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("model built for n_t = {model}, sample has n_t = {sample}")]
    AntennaMismatch { model: usize, sample: usize },
    #[error("flat MLP was built for K = {expected} users, input has K = {got}")]
    UserCount { expected: usize, got: usize },
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
    #[error("missing parameter {0}")]
    MissingParam(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    n_t: usize,
    params: ParameterSet,
    grid: KnotGrid,
}

impl Model {
    /// Builds a model with all-zero parameters.
    pub fn new(config: ModelConfig, n_t: usize) -> Result<Self, ModelError> {
        let params = ParameterSet::zeros(&config, n_t);
        Self::from_parts(config, n_t, params)
    }

    pub fn from_parts(config: ModelConfig, n_t: usize, params: ParameterSet) -> Result<Self, ModelError> {
        config.validate()?;
        if n_t == 0 {
            return Err(ModelError::Config("n_t must be >= 1".into()));
        }
        params.check_layout(&config, n_t)?;
        let grid = KnotGrid::uniform(
            config.grid_range.0,
            config.grid_range.1,
            config.spline_count,
            config.spline_degree,
        );
        Ok(Self {
            config,
            n_t,
            params,
            grid,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParameterSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParameterSet) -> Result<(), ModelError> {
        params.check_layout(&self.config, self.n_t)?;
        self.params = params;
        Ok(())
    }

    pub fn grid(&self) -> &KnotGrid {
        &self.grid
    }

    /// Rejects samples this model cannot consume.
    pub fn check_sample(&self, sample: &ChannelSample) -> Result<(), ModelError> {
        if sample.n_t() != self.n_t {
            return Err(ModelError::AntennaMismatch {
                model: self.n_t,
                sample: sample.n_t(),
            });
        }
        if let Architecture::PlainMlp { users } = self.config.architecture {
            if sample.k() != users {
                return Err(ModelError::UserCount {
                    expected: users,
                    got: sample.k(),
                });
            }
        }
        Ok(())
    }

    /// Records the full forward pass and returns the feasible
    /// `K × 2·n_t` output (`[Re(w_k), Im(w_k)]` rows).
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape,
        bound: &BoundParams<'_>,
        sample: &ChannelSample,
    ) -> Result<Var, ModelError> {
        self.check_sample(sample)?;
        let cfg = &self.config;
        if let Architecture::PlainMlp { users } = cfg.architecture {
            let weights = (0..cfg.mlp_hidden.len() + 1)
                .map(|t| bound.var(&format!("fc{t}.w")))
                .collect::<Result<Vec<_>, _>>()?;
            return layers::plain_mlp_forward(tape, sample, &weights, users);
        }
        let mut h = layers::preprocess(tape, sample, bound.var("w0")?)?;
        for l in 0..cfg.l_layers {
            let heads = cfg.heads[l];
            h = match cfg.encoder_kind {
                EncoderKind::Transformer => {
                    let v = |n: &str| bound.var(&format!("tel{l}.{n}"));
                    let p = TelParams {
                        wq: v("wq")?,
                        wk: v("wk")?,
                        wv: v("wv")?,
                        wma: v("wma")?,
                        w1: v("w1")?,
                        w2: v("w2")?,
                    };
                    layers::tel_forward(tape, h, &p, heads, cfg.conventional_residual)?
                }
                EncoderKind::Gat => {
                    let v = |n: &str| bound.var(&format!("gat{l}.{n}"));
                    let p = GatParams {
                        w: v("w")?,
                        a_src: v("a_src")?,
                        a_dst: v("a_dst")?,
                    };
                    layers::gat_forward(tape, h, &p, heads)?
                }
            };
        }
        let mut f = h;
        match cfg.decoder_kind {
            DecoderKind::Kan => {
                for t in 0..cfg.t_layers {
                    let v = |n: &str| bound.var(&format!("kdl{t}.{n}"));
                    let p = KdlParams {
                        beta: v("beta")?,
                        gamma: v("gamma")?,
                        coef: v("coef")?,
                    };
                    f = layers::kdl_forward(tape, f, &p, &self.grid)?;
                }
            }
            DecoderKind::Mlp => {
                let weights = (0..cfg.t_layers)
                    .map(|t| bound.var(&format!("mlp{t}.w")))
                    .collect::<Result<Vec<_>, _>>()?;
                f = layers::mlp_decoder_forward(tape, f, &weights)?;
            }
        }
        layers::postprocess(tape, f, sample.config().p_max)
    }

    /// Inference without gradient tracking.
    pub fn forward(&self, sample: &ChannelSample) -> Result<BeamformingMatrix, ModelError> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let out = self.forward_on_tape(&mut tape, &bound, sample)?;
        let w = BeamformingMatrix::from_real_rows(sample.k(), sample.n_t(), tape.data(out))
            .expect("forward output has K x 2n_t entries");
        Ok(w)
    }
}
