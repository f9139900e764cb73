//! Reference solvers for the power-constrained weighted-EE problem.
//!
//! - [`solve_k1`]: exact single-user solution (MRT direction plus a
//!   golden-section search over the transmit power).
//! - [`solve_pga`]: multistart projected gradient ascent with Armijo
//!   backtracking; gradients come from the autodiff tape.
//! - [`solve_dinkelbach`]: Dinkelbach iterations on the EE ratio, each
//!   subproblem solved by the same ascent, warm-started from `solve_pga`.
//! - [`verifier`]: an exhaustive grid search for K = 2, N_T = 2 that shares
//!   no code with the ascent.

mod cache;
pub mod verifier;

pub use cache::{load_or_solve, read_cache, sidecar_path, solve_all, write_cache, CacheEntry, CACHE_HEADER};

use crate::autodiff::{Tape, Tensor};
use crate::sysmodel::{energy_efficiency, BeamformingMatrix, ChannelSample};
use crate::training::weighted_rate_and_power_on_tape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Sufficient-increase constant of the Armijo test.
pub const ARMIJO_SIGMA: f64 = 1e-4;
const ARMIJO_SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;
const GOLDEN_TOL: f64 = 1e-10;
const MAX_DINKELBACH_ROUNDS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle configuration: {0}")]
    Config(String),
    #[error("closed-form oracle needs K = 1, sample has K = {0}")]
    NotSingleUser(usize),
    #[error("oracle cache line {line}: {reason}")]
    Cache { line: usize, reason: String },
    #[error("oracle cache I/O: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleMethod {
    ClosedFormK1,
    PgaMultistart,
    DinkelbachSca,
}

impl fmt::Display for OracleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OracleMethod::ClosedFormK1 => "closed_form_k1",
            OracleMethod::PgaMultistart => "pga_multistart",
            OracleMethod::DinkelbachSca => "dinkelbach_sca",
        })
    }
}

impl FromStr for OracleMethod {
    type Err = OracleError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "closed_form_k1" => Ok(OracleMethod::ClosedFormK1),
            "pga_multistart" | "pga" => Ok(OracleMethod::PgaMultistart),
            "dinkelbach_sca" | "dinkelbach" => Ok(OracleMethod::DinkelbachSca),
            other => Err(OracleError::Config(format!("unknown oracle method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleConfig {
    pub method: OracleMethod,
    pub restarts: usize,
    /// Ascent iterations per restart (and per Dinkelbach subproblem).
    pub max_iters: usize,
    /// Relative-improvement stop for the ascent; `|F(λ)|` stop for Dinkelbach.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            method: OracleMethod::PgaMultistart,
            restarts: 20,
            max_iters: 1000,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl OracleConfig {
    pub fn validate(&self) -> Result<(), OracleError> {
        if self.restarts == 0 {
            return Err(OracleError::Config("restarts must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(OracleError::Config("max_iters must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(OracleError::Config("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub w: BeamformingMatrix,
    pub ee: f64,
    pub method: OracleMethod,
    /// Golden-section steps, ascent iterations summed over restarts, or
    /// ascent iterations summed over Dinkelbach rounds.
    pub iters: usize,
    /// λ after each Dinkelbach round (empty for the other methods).
    pub lambda_trace: Vec<f64>,
}

/// Runs the configured method.
pub fn solve(sample: &ChannelSample, config: &OracleConfig) -> Result<OracleSolution, OracleError> {
    config.validate()?;
    match config.method {
        OracleMethod::ClosedFormK1 => solve_k1(sample),
        OracleMethod::PgaMultistart => Ok(solve_pga(sample, config)),
        OracleMethod::DinkelbachSca => Ok(solve_dinkelbach(sample, config)),
    }
}

/// Single-user EE at transmit power `p` along the MRT direction.
pub fn k1_objective(gain: f64, alpha: f64, noise: f64, p_c: f64, p: f64) -> f64 {
    alpha * (1.0 + p * gain / noise).log2() / (p + p_c)
}

/// Exact K = 1 optimum.
pub fn solve_k1(sample: &ChannelSample) -> Result<OracleSolution, OracleError> {
    let cfg = sample.config();
    if cfg.k != 1 {
        return Err(OracleError::NotSingleUser(cfg.k));
    }
    let h = sample.user(0);
    let gain: f64 = h.iter().map(|z| z.norm_sqr()).sum();
    if gain == 0.0 {
        return Ok(OracleSolution {
            w: BeamformingMatrix::zeros(1, cfg.n_t),
            ee: 0.0,
            method: OracleMethod::ClosedFormK1,
            iters: 0,
            lambda_trace: Vec::new(),
        });
    }
    let f = |p: f64| k1_objective(gain, cfg.weights[0], cfg.noise_power[0], cfg.p_c, p);
    let (p, iters) = golden_section_max(f, 0.0, cfg.p_max, GOLDEN_TOL);
    let p = if f(cfg.p_max) >= f(p) { cfg.p_max } else { p };
    let norm = gain.sqrt();
    let scale = p.sqrt() / norm;
    let w = BeamformingMatrix::new(1, cfg.n_t, h.iter().map(|z| z * scale).collect())
        .expect("shape matches sample");
    Ok(OracleSolution {
        ee: energy_efficiency(sample, &w).expect("shape matches sample"),
        w,
        method: OracleMethod::ClosedFormK1,
        iters,
        lambda_trace: Vec::new(),
    })
}

/// Maximiser of a unimodal `f` on `[lo, hi]`, and the number of steps.
pub fn golden_section_max(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> (f64, usize) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iters = 0;
    while b - a > tol {
        iters += 1;
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (0.5 * (a + b), iters)
}

#[derive(Debug, Clone, Copy)]
enum Objective {
    Ee,
    /// `Σ α_k R_k − λ (Σ ‖w_k‖² + P_C)`
    Parametric(f64),
}

fn to_matrix(sample: &ChannelSample, rows: &[f64]) -> BeamformingMatrix {
    BeamformingMatrix::from_real_rows(sample.k(), sample.n_t(), rows).expect("K x 2n_t rows")
}

fn value(sample: &ChannelSample, rows: &[f64], obj: Objective) -> f64 {
    let w = to_matrix(sample, rows);
    let ee = energy_efficiency(sample, &w).expect("shape matches sample");
    match obj {
        Objective::Ee => ee,
        Objective::Parametric(lambda) => {
            let consumed = w.power() + sample.config().p_c;
            (ee - lambda) * consumed
        }
    }
}

fn gradient(sample: &ChannelSample, rows: &[f64], obj: Objective) -> Vec<f64> {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::from_vec(sample.k(), 2 * sample.n_t(), rows.to_vec()).expect("K x 2n_t rows"));
    let (rate, power) = weighted_rate_and_power_on_tape(&mut tape, sample, w).expect("shapes match");
    let out = match obj {
        Objective::Ee => {
            let consumed = tape.add_const(power, sample.config().p_c);
            tape.div(rate, consumed).expect("scalars")
        }
        Objective::Parametric(lambda) => {
            let cost = tape.scale(power, lambda);
            tape.sub(rate, cost).expect("scalars")
        }
    };
    tape.backward(out).expect("scalar objective");
    tape.take_grad(w).unwrap_or_else(|| vec![0.0; rows.len()])
}

fn project(rows: &mut [f64], p_max: f64) {
    let power: f64 = rows.iter().map(|v| v * v).sum();
    if power > p_max {
        let c = (p_max / power).sqrt();
        rows.iter_mut().for_each(|v| *v *= c);
    }
}

/// Projected gradient ascent with Armijo backtracking from `start`.
/// Returns the final point, its objective value and the iteration count.
fn ascend(sample: &ChannelSample, start: Vec<f64>, obj: Objective, config: &OracleConfig) -> (Vec<f64>, f64, usize) {
    let p_max = sample.config().p_max;
    let mut w = start;
    project(&mut w, p_max);
    let mut f = value(sample, &w, obj);
    let mut iters = 0;
    while iters < config.max_iters {
        iters += 1;
        let g = gradient(sample, &w, obj);
        let mut step = 1.0;
        let mut next = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand: Vec<f64> = w.iter().zip(&g).map(|(x, d)| x + step * d).collect();
            project(&mut cand, p_max);
            let ascent: f64 = g.iter().zip(cand.iter().zip(&w)).map(|(d, (c, x))| d * (c - x)).sum();
            if ascent <= 0.0 {
                break;
            }
            let fc = value(sample, &cand, obj);
            if fc >= f + ARMIJO_SIGMA * ascent {
                next = Some((cand, fc));
                break;
            }
            step *= ARMIJO_SHRINK;
        }
        let Some((cand, fc)) = next else { break };
        let gain = fc - f;
        w = cand;
        f = fc;
        if gain <= config.tolerance * f.abs().max(1e-300) {
            break;
        }
    }
    (w, f, iters)
}

/// Starting point `r`: MRT at full and at quarter budget, then random
/// complex directions at random total power.
pub fn initial_point(sample: &ChannelSample, restart: usize, seed: u64) -> Vec<f64> {
    let cfg = sample.config();
    let (k, n) = (cfg.k, cfg.n_t);
    let mut rows = vec![0.0; k * 2 * n];
    if restart < 2 {
        let total = if restart == 0 { cfg.p_max } else { 0.25 * cfg.p_max };
        for u in 0..k {
            let h = sample.user(u);
            let norm = h.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let c = (total / k as f64).sqrt() / norm;
            for (j, z) in h.iter().enumerate() {
                rows[u * 2 * n + j] = c * z.re;
                rows[u * 2 * n + n + j] = c * z.im;
            }
        }
        return rows;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rows.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
    let power: f64 = rows.iter().map(|v| v * v).sum();
    let target = rng.random_range(0.05..1.0) * cfg.p_max;
    let c = (target / power).sqrt();
    rows.iter_mut().for_each(|v| *v *= c);
    rows
}

/// Best of `config.restarts` projected-gradient ascents. Ties go to the
/// lowest restart index.
pub fn solve_pga(sample: &ChannelSample, config: &OracleConfig) -> OracleSolution {
    let runs: Vec<(Vec<f64>, f64, usize)> = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| ascend(sample, initial_point(sample, r, config.seed), Objective::Ee, config))
        .collect();
    let iters = runs.iter().map(|r| r.2).sum();
    let mut best = 0;
    for (i, r) in runs.iter().enumerate() {
        if r.1 > runs[best].1 {
            best = i;
        }
    }
    let (rows, ee, _) = runs.into_iter().nth(best).expect("at least one restart");
    OracleSolution {
        w: to_matrix(sample, &rows),
        ee,
        method: OracleMethod::PgaMultistart,
        iters,
        lambda_trace: Vec::new(),
    }
}

/// Dinkelbach's method, warm-started from [`solve_pga`]. Each round
/// maximises `Σ α_k R_k − λ (P + P_C)` from the previous point, so
/// `F(λ) ≥ 0` and λ never decreases.
pub fn solve_dinkelbach(sample: &ChannelSample, config: &OracleConfig) -> OracleSolution {
    let start = solve_pga(sample, config);
    let mut rows = start.w.to_real_rows();
    let mut lambda = start.ee;
    let mut trace = vec![lambda];
    let mut iters = start.iters;
    for _ in 0..MAX_DINKELBACH_ROUNDS {
        let (next, f, it) = ascend(sample, rows.clone(), Objective::Parametric(lambda), config);
        iters += it;
        let ee = value(sample, &next, Objective::Ee);
        if ee >= lambda {
            rows = next;
            lambda = ee;
        }
        trace.push(lambda);
        if f.abs() < config.tolerance {
            break;
        }
    }
    OracleSolution {
        w: to_matrix(sample, &rows),
        ee: lambda,
        method: OracleMethod::DinkelbachSca,
        iters,
        lambda_trace: trace,
    }
}
