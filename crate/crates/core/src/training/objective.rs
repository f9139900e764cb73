//! Differentiable weighted energy efficiency and the unsupervised loss.
//!
//! Complex products are expanded into real pairs: with `H = Hr + iHi` and
//! `W = Wr + iWi` (rows are users), `h_kᴴ w_i` is entry `(k, i)` of
//! `(Hr·Wrᵀ + Hi·Wiᵀ) + i(Hr·Wiᵀ − Hi·Wrᵀ)`.

use crate::autodiff::{Tape, Tensor, Var};
use crate::model::{Model, ModelError};
use crate::sysmodel::ChannelSample;
use rayon::prelude::*;

/// Weighted EE of the `K × 2·n_t` real beamformer rows `w`, as a 1×1 node.
pub fn energy_efficiency_on_tape(
    tape: &mut Tape,
    sample: &ChannelSample,
    w: Var,
) -> Result<Var, ModelError> {
    let (numerator, power) = weighted_rate_and_power_on_tape(tape, sample, w)?;
    let consumed = tape.add_const(power, sample.config().p_c);
    Ok(tape.div(numerator, consumed)?)
}

/// `(Σ α_k·R_k, Σ ‖w_k‖²)` as 1×1 nodes.
pub fn weighted_rate_and_power_on_tape(
    tape: &mut Tape,
    sample: &ChannelSample,
    w: Var,
) -> Result<(Var, Var), ModelError> {
    let cfg = sample.config();
    let (k, n) = (cfg.k, cfg.n_t);
    let mut hr = Vec::with_capacity(k * n);
    let mut hi = Vec::with_capacity(k * n);
    for z in sample.h() {
        hr.push(z.re);
        hi.push(z.im);
    }
    let hr = tape.constant(Tensor::from_vec(k, n, hr)?);
    let hi = tape.constant(Tensor::from_vec(k, n, hi)?);
    let wr = tape.slice_cols(w, 0, n)?;
    let wi = tape.slice_cols(w, n, n)?;
    let wr_t = tape.transpose(wr);
    let wi_t = tape.transpose(wi);

    let a = tape.matmul(hr, wr_t)?;
    let b = tape.matmul(hi, wi_t)?;
    let re = tape.add(a, b)?;
    let a = tape.matmul(hr, wi_t)?;
    let b = tape.matmul(hi, wr_t)?;
    let im = tape.sub(a, b)?;
    let re2 = tape.square(re);
    let im2 = tape.square(im);
    let gain = tape.add(re2, im2)?;

    let signal = tape.diag(gain)?;
    let received = tape.sum_cols(gain);
    let interference = tape.sub(received, signal)?;
    let noise = tape.constant(Tensor::from_vec(k, 1, cfg.noise_power.clone())?);
    let denom = tape.add(interference, noise)?;
    let sinr = tape.div(signal, denom)?;
    let one_plus = tape.add_const(sinr, 1.0);
    let ln = tape.ln(one_plus);
    let rates = tape.scale(ln, std::f64::consts::LOG2_E);
    let weights = tape.constant(Tensor::from_vec(k, 1, cfg.weights.clone())?);
    let weighted = tape.mul(rates, weights)?;
    let numerator = tape.sum(weighted);

    let sq = tape.square(w);
    let power = tape.sum(sq);
    Ok((numerator, power))
}

/// `−mean EE` over `batch`, recorded on one tape.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    model: &Model,
    bound: &crate::model::BoundParams<'_>,
    batch: &[&ChannelSample],
) -> Result<Var, ModelError> {
    let mut total: Option<Var> = None;
    for sample in batch {
        let w = model.forward_on_tape(tape, bound, sample)?;
        let ee = energy_efficiency_on_tape(tape, sample, w)?;
        total = Some(match total {
            None => ee,
            Some(t) => tape.add(t, ee)?,
        });
    }
    let total = total.ok_or_else(|| ModelError::Config("empty batch".into()))?;
    Ok(tape.scale(total, -1.0 / batch.len() as f64))
}

/// Loss value only (no gradient tracking).
pub fn batch_loss(model: &Model, batch: &[&ChannelSample]) -> Result<f64, ModelError> {
    let mut tape = Tape::new();
    let bound = model.params().bind(&mut tape, false);
    let loss = batch_loss_on_tape(&mut tape, model, &bound, batch)?;
    Ok(tape.scalar(loss))
}

/// Loss and its gradient for every parameter tensor, in parameter order.
///
/// Each sample is differentiated on its own tape (possibly on worker
/// threads); per-sample results are summed in batch order, so the result
/// does not depend on the thread count.
pub fn loss_and_gradient(
    model: &Model,
    batch: &[&ChannelSample],
) -> Result<(f64, Vec<Vec<f64>>), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::Config("empty batch".into()));
    }
    let per_sample: Vec<(f64, Vec<Vec<f64>>)> = batch
        .par_iter()
        .map(|sample| {
            let mut tape = Tape::new();
            let bound = model.params().bind(&mut tape, true);
            let w = model.forward_on_tape(&mut tape, &bound, sample)?;
            let ee = energy_efficiency_on_tape(&mut tape, sample, w)?;
            tape.backward(ee)?;
            let value = tape.scalar(ee);
            Ok((value, bound.take_grads(&mut tape)))
        })
        .collect::<Result<_, ModelError>>()?;
    let scale = -1.0 / batch.len() as f64;
    let mut iter = per_sample.into_iter();
    let (mut ee_sum, mut grads) = iter.next().expect("non-empty batch");
    for (ee, g) in iter {
        ee_sum += ee;
        for (acc, part) in grads.iter_mut().zip(&g) {
            acc.iter_mut().zip(part).for_each(|(a, b)| *a += b);
        }
    }
    grads
        .iter_mut()
        .for_each(|g| g.iter_mut().for_each(|v| *v *= scale));
    Ok((ee_sum * scale, grads))
}
