//! Differentiable building blocks. Every function records onto the given
//! tape and returns the output handle; rows always index users.

use super::ModelError;
use crate::autodiff::{KnotGrid, Tape, Tensor, Var};
use crate::sysmodel::ChannelSample;

type Result<T> = std::result::Result<T, ModelError>;

pub const GAT_LEAKY_SLOPE: f64 = 0.2;

/// Weights of one transformer encoder layer. Query/key/value are `D×D`;
/// head `m` uses columns `m·D/M .. (m+1)·D/M`.
#[derive(Debug, Clone, Copy)]
pub struct TelParams {
    pub wq: Var,
    pub wk: Var,
    pub wv: Var,
    pub wma: Var,
    pub w1: Var,
    pub w2: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct KdlParams {
    /// `F_in × F_out`
    pub beta: Var,
    /// `F_in × F_out`
    pub gamma: Var,
    /// `(F_in·n_basis) × F_out`; row `i·n_basis + p` holds `c_{p,·,i}`.
    pub coef: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct GatParams {
    pub w: Var,
    /// `(D/M) × M`, column `m` scores head `m`.
    pub a_src: Var,
    pub a_dst: Var,
}

/// Stacks `[Re(h_k), Im(h_k)]` rows and projects them by `w0`.
pub fn preprocess(tape: &mut Tape, sample: &ChannelSample, w0: Var) -> Result<Var> {
    let features = Tensor::from_vec(sample.k(), 2 * sample.n_t(), sample.real_features())?;
    let x = tape.constant(features);
    Ok(tape.matmul(x, w0)?)
}

/// One multi-head self-attention + feed-forward encoder layer.
pub fn tel_forward(
    tape: &mut Tape,
    h: Var,
    p: &TelParams,
    heads: usize,
    conventional_residual: bool,
) -> Result<Var> {
    let d = tape.shape(h).cols;
    let dh = d / heads;
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let q = tape.matmul(h, p.wq)?;
    let k = tape.matmul(h, p.wk)?;
    let v = tape.matmul(h, p.wv)?;
    let mut outs = Vec::with_capacity(heads);
    for m in 0..heads {
        let qm = tape.slice_cols(q, m * dh, dh)?;
        let km = tape.slice_cols(k, m * dh, dh)?;
        let vm = tape.slice_cols(v, m * dh, dh)?;
        let kt = tape.transpose(km);
        let scores = tape.matmul(qm, kt)?;
        let scores = tape.scale(scores, inv_sqrt_d);
        let attn = tape.softmax_rows(scores)?;
        outs.push(tape.matmul(attn, vm)?);
    }
    let cat = if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? };
    let h_ma = tape.matmul(cat, p.wma)?;
    let normed = tape.layernorm_rows(h_ma);
    let h_tilde = tape.add(normed, h)?;
    let hidden = tape.matmul(h_tilde, p.w1)?;
    let hidden = tape.relu(hidden);
    let h_ff = tape.matmul(hidden, p.w2)?;
    let normed = tape.layernorm_rows(h_ff);
    let residual = if conventional_residual { h_tilde } else { h_ff };
    Ok(tape.add(normed, residual)?)
}

/// `out[k, j] = Σ_i β_ji·silu(x_ki) + γ_ji·Σ_p c_pji·B_p(x_ki)`
pub fn kdl_forward(tape: &mut Tape, f: Var, p: &KdlParams, grid: &KnotGrid) -> Result<Var> {
    let act = tape.silu(f);
    let base = tape.matmul(act, p.beta)?;
    let spline = tape.kan_spline(f, p.coef, p.gamma, grid)?;
    Ok(tape.add(base, spline)?)
}

/// Graph-attention layer over the fully connected user graph.
///
/// Head `m` scores pair `(k, i)` as `LeakyReLU(a_srcᵀ z_k + a_dstᵀ z_i)`,
/// normalises over `i`, and aggregates `z_i`; heads are concatenated.
pub fn gat_forward(tape: &mut Tape, h: Var, p: &GatParams, heads: usize) -> Result<Var> {
    let users = tape.shape(h).rows;
    let d = tape.shape(h).cols;
    let dh = d / heads;
    let z = tape.matmul(h, p.w)?;
    let ones_row = tape.constant(Tensor::from_vec(1, users, vec![1.0; users])?);
    let ones_col = tape.constant(Tensor::from_vec(users, 1, vec![1.0; users])?);
    let mut outs = Vec::with_capacity(heads);
    for m in 0..heads {
        let zm = tape.slice_cols(z, m * dh, dh)?;
        let a_src = tape.slice_cols(p.a_src, m, 1)?;
        let a_dst = tape.slice_cols(p.a_dst, m, 1)?;
        let src = tape.matmul(zm, a_src)?;
        let dst = tape.matmul(zm, a_dst)?;
        let dst_t = tape.transpose(dst);
        let e_src = tape.matmul(src, ones_row)?;
        let e_dst = tape.matmul(ones_col, dst_t)?;
        let e = tape.add(e_src, e_dst)?;
        let e = tape.leaky_relu(e, GAT_LEAKY_SLOPE);
        let attn = tape.softmax_rows(e)?;
        outs.push(tape.matmul(attn, zm)?);
    }
    Ok(if heads == 1 { outs[0] } else { tape.concat_cols(&outs)? })
}

/// Position-wise MLP with ReLU between layers (none after the last).
pub fn mlp_decoder_forward(tape: &mut Tape, f: Var, weights: &[Var]) -> Result<Var> {
    let mut x = f;
    for (t, &w) in weights.iter().enumerate() {
        x = tape.matmul(x, w)?;
        if t + 1 < weights.len() {
            x = tape.relu(x);
        }
    }
    Ok(x)
}

/// Flattens all users into one row, runs a dense ReLU MLP and reshapes the
/// result back to `K × 2·n_t` before the power projection.
pub fn plain_mlp_forward(
    tape: &mut Tape,
    sample: &ChannelSample,
    weights: &[Var],
    users: usize,
) -> Result<Var> {
    if sample.k() != users {
        return Err(ModelError::UserCount {
            expected: users,
            got: sample.k(),
        });
    }
    let n = 2 * sample.k() * sample.n_t();
    let x = tape.constant(Tensor::from_vec(1, n, sample.real_features())?);
    let out = mlp_decoder_forward(tape, x, weights)?;
    let rows = tape.reshape(out, sample.k(), 2 * sample.n_t())?;
    postprocess(tape, rows, sample.config().p_max)
}

/// Scales the `K × 2·n_t` real output so the total power is at most `p_max`:
/// `w = w̃ · sqrt(p_max / max(p_max, Σ‖w̃_i‖²))`.
pub fn postprocess(tape: &mut Tape, f_out: Var, p_max: f64) -> Result<Var> {
    let sq = tape.square(f_out);
    let power = tape.sum(sq);
    let denom = tape.clamp_min(power, p_max);
    let budget = tape.constant(Tensor::scalar(p_max));
    let ratio = tape.div(budget, denom)?;
    let factor = tape.sqrt(ratio);
    Ok(tape.mul_scalar(f_out, factor)?)
}
