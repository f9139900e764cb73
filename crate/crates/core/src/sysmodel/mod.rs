//! Downlink MISO system model.
//!
//! One transmitter with `n_t` antennas serves `k` single-antenna users.
//! Everything in this module works in complex arithmetic and is the
//! reference path for rates and energy efficiency; the differentiable
//! training objective re-derives the same quantities from real pairs.

mod dataset;

pub use dataset::{read_dataset, write_dataset, Dataset, DatasetError};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SysError {
    #[error("invalid system configuration: {0}")]
    Config(String),
    #[error("shape mismatch: expected {expected_k}x{expected_nt}, got {k}x{nt}")]
    Shape {
        expected_k: usize,
        expected_nt: usize,
        k: usize,
        nt: usize,
    },
    #[error("sample count must be at least 1")]
    EmptyCount,
}

/// Physical parameters shared by every sample of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    pub n_t: usize,
    pub k: usize,
    /// Transmit power budget in watts.
    pub p_max: f64,
    /// Circuit power in watts.
    pub p_c: f64,
    /// Noise power per user in watts.
    pub noise_power: Vec<f64>,
    /// Rate weight per user.
    pub weights: Vec<f64>,
}

impl SystemConfig {
    /// Equal noise and unit weights for all users.
    pub fn uniform(n_t: usize, k: usize, p_max: f64, p_c: f64, noise: f64) -> Result<Self, SysError> {
        let cfg = Self {
            n_t,
            k,
            p_max,
            p_c,
            noise_power: vec![noise; k],
            weights: vec![1.0; k],
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// `p_max = 1 W`, `p_c = 0.1 W`, unit noise.
    pub fn standard(n_t: usize, k: usize) -> Result<Self, SysError> {
        Self::uniform(n_t, k, 1.0, 0.1, 1.0)
    }

    pub fn validate(&self) -> Result<(), SysError> {
        let bad = |m: &str| Err(SysError::Config(m.to_string()));
        if self.n_t == 0 {
            return bad("n_t must be >= 1");
        }
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return bad("p_max must be > 0");
        }
        if !(self.p_c >= 0.0 && self.p_c.is_finite()) {
            return bad("p_c must be >= 0");
        }
        if self.noise_power.len() != self.k || self.weights.len() != self.k {
            return bad("noise_power and weights need one entry per user");
        }
        if self.noise_power.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("noise power must be > 0");
        }
        if self.weights.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return bad("weights must be > 0");
        }
        Ok(())
    }

    /// Same physical parameters with a different user count.
    pub fn with_users(&self, k: usize) -> Result<Self, SysError> {
        if !self.noise_power.windows(2).all(|w| w[0] == w[1])
            || !self.weights.windows(2).all(|w| w[0] == w[1])
        {
            return Err(SysError::Config(
                "cannot resize a configuration with per-user noise or weights".into(),
            ));
        }
        let noise = self.noise_power.first().copied().unwrap_or(1.0);
        let weight = self.weights.first().copied().unwrap_or(1.0);
        let cfg = Self {
            k,
            noise_power: vec![noise; k],
            weights: vec![weight; k],
            ..self.clone()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One channel realisation. Row `k` of `h` is the channel vector of user `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSample {
    config: Arc<SystemConfig>,
    h: Vec<Complex64>,
}

impl ChannelSample {
    pub fn new(config: Arc<SystemConfig>, h: Vec<Complex64>) -> Result<Self, SysError> {
        if h.len() != config.k * config.n_t {
            return Err(SysError::Shape {
                expected_k: config.k,
                expected_nt: config.n_t,
                k: h.len() / config.n_t.max(1),
                nt: config.n_t,
            });
        }
        if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(SysError::Config("channel entries must be finite".into()));
        }
        Ok(Self { config, h })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn shared_config(&self) -> &Arc<SystemConfig> {
        &self.config
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn n_t(&self) -> usize {
        self.config.n_t
    }

    pub fn h(&self) -> &[Complex64] {
        &self.h
    }

    pub fn user(&self, k: usize) -> &[Complex64] {
        let n = self.config.n_t;
        &self.h[k * n..(k + 1) * n]
    }

    /// Row `k` = `[Re(h_k), Im(h_k)]`, flattened row-major (`k × 2·n_t`).
    pub fn real_features(&self) -> Vec<f64> {
        let n = self.config.n_t;
        let mut out = Vec::with_capacity(self.h.len() * 2);
        for row in self.h.chunks(n) {
            out.extend(row.iter().map(|z| z.re));
            out.extend(row.iter().map(|z| z.im));
        }
        out
    }

    /// Copy of this sample with users reordered: new user `j` is old user `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut h = Vec::with_capacity(self.h.len());
        for &src in perm {
            h.extend_from_slice(self.user(src));
        }
        let cfg = &self.config;
        let config = Arc::new(SystemConfig {
            noise_power: perm.iter().map(|&i| cfg.noise_power[i]).collect(),
            weights: perm.iter().map(|&i| cfg.weights[i]).collect(),
            ..(**cfg).clone()
        });
        Self { config, h }
    }
}

/// `k` complex beamforming vectors; row `k` is `w_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformingMatrix {
    k: usize,
    n_t: usize,
    w: Vec<Complex64>,
}

impl BeamformingMatrix {
    pub fn new(k: usize, n_t: usize, w: Vec<Complex64>) -> Result<Self, SysError> {
        if w.len() != k * n_t {
            return Err(SysError::Shape {
                expected_k: k,
                expected_nt: n_t,
                k: w.len() / n_t.max(1),
                nt: n_t,
            });
        }
        Ok(Self { k, n_t, w })
    }

    pub fn zeros(k: usize, n_t: usize) -> Self {
        Self {
            k,
            n_t,
            w: vec![Complex64::new(0.0, 0.0); k * n_t],
        }
    }

    /// Rebuilds from a real `k × 2·n_t` matrix whose rows are `[Re, Im]`.
    pub fn from_real_rows(k: usize, n_t: usize, rows: &[f64]) -> Result<Self, SysError> {
        if rows.len() != k * 2 * n_t {
            return Err(SysError::Shape {
                expected_k: k,
                expected_nt: n_t,
                k: rows.len() / (2 * n_t).max(1),
                nt: n_t,
            });
        }
        let w = rows
            .chunks(2 * n_t)
            .flat_map(|r| (0..n_t).map(move |n| Complex64::new(r[n], r[n_t + n])))
            .collect();
        Ok(Self { k, n_t, w })
    }

    /// Inverse of [`BeamformingMatrix::from_real_rows`].
    pub fn to_real_rows(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.w.len() * 2);
        for row in self.w.chunks(self.n_t) {
            out.extend(row.iter().map(|z| z.re));
            out.extend(row.iter().map(|z| z.im));
        }
        out
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.w
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.w
    }

    pub fn user(&self, k: usize) -> &[Complex64] {
        &self.w[k * self.n_t..(k + 1) * self.n_t]
    }

    /// Total transmit power `Σ_k ‖w_k‖²`.
    pub fn power(&self) -> f64 {
        self.w.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn is_feasible(&self, p_max: f64) -> bool {
        self.power() <= p_max
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            w: self.w.iter().map(|z| z * c).collect(),
            ..self.clone()
        }
    }
}

fn check_shapes(sample: &ChannelSample, w: &BeamformingMatrix) -> Result<(), SysError> {
    if w.k != sample.k() || w.n_t != sample.n_t() {
        return Err(SysError::Shape {
            expected_k: sample.k(),
            expected_nt: sample.n_t(),
            k: w.k,
            nt: w.n_t,
        });
    }
    Ok(())
}

/// `h^H w`
fn inner(h: &[Complex64], w: &[Complex64]) -> Complex64 {
    h.iter().zip(w).map(|(a, b)| a.conj() * b).sum()
}

/// Achievable rate of user `k` in bit/s/Hz.
pub fn rate(sample: &ChannelSample, w: &BeamformingMatrix, k: usize) -> Result<f64, SysError> {
    check_shapes(sample, w)?;
    let h = sample.user(k);
    let signal = inner(h, w.user(k)).norm_sqr();
    let interference: f64 = (0..w.k)
        .filter(|&i| i != k)
        .map(|i| inner(h, w.user(i)).norm_sqr())
        .sum();
    Ok((1.0 + signal / (interference + sample.config().noise_power[k])).log2())
}

/// Weighted sum rate over total consumed power, in bit/Hz/J.
pub fn energy_efficiency(sample: &ChannelSample, w: &BeamformingMatrix) -> Result<f64, SysError> {
    check_shapes(sample, w)?;
    let cfg = sample.config();
    let mut weighted = 0.0;
    for k in 0..cfg.k {
        weighted += cfg.weights[k] * rate(sample, w, k)?;
    }
    Ok(weighted / (w.power() + cfg.p_c))
}

/// Scales all beamformers by `sqrt(p_max / max(p_max, Σ‖w̃_i‖²))`.
pub fn scale_to_budget(w_tilde: &BeamformingMatrix, p_max: f64) -> BeamformingMatrix {
    let power = w_tilde.power();
    if power <= p_max {
        return w_tilde.clone();
    }
    w_tilde.scaled((p_max / power).sqrt())
}

/// i.i.d. `CN(0, 1)` channel entries, deterministic under `seed`.
pub fn generate_rayleigh(
    config: &SystemConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<ChannelSample>, SysError> {
    config.validate()?;
    if count == 0 {
        return Err(SysError::EmptyCount);
    }
    let config = Arc::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std::f64::consts::FRAC_1_SQRT_2).expect("valid std");
    let per = config.k * config.n_t;
    Ok((0..count)
        .map(|_| {
            let h = (0..per)
                .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect();
            ChannelSample {
                config: Arc::clone(&config),
                h,
            }
        })
        .collect())
}
