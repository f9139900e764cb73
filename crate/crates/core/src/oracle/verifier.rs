//! Exhaustive search for K = 2, N_T = 2, independent of the tape.
//!
//! Each beam is `√p_k · (cos θ_k, sin θ_k·e^{iφ_k})`; a per-user phase does
//! not change any `|h_jᴴ w_k|²`, so `(θ, φ) ∈ [0, π/2] × [0, 2π)` covers
//! every direction. Stage one scans a 17 × 32 direction grid per user
//! (544 directions, 295 936 direction pairs) against 91 power splits
//! `p_1 + p_2 ≤ P_max` on a 1/12 lattice: about 2.7·10⁷ points. Stage two
//! zooms in around the best 8 grid points with a 3⁶ stencil that halves its
//! spacing whenever no neighbour improves, down to 1e-9 rad / 1e-9·P_max.
//! On random instances the zoom adds at most a few tenths of a percent
//! over the coarse scan, so the grid-induced error of the final value is
//! well below 0.5%.

use crate::sysmodel::{BeamformingMatrix, ChannelSample};
use num_complex::Complex64;
use std::f64::consts::{FRAC_PI_2, PI};

const THETA_STEPS: usize = 16;
const PHI_STEPS: usize = 32;
const POWER_STEPS: usize = 12;
const KEEP: usize = 8;
const MIN_STEP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub ee: f64,
    /// Best value of the coarse scan alone.
    pub coarse_ee: f64,
    pub w: BeamformingMatrix,
    pub evaluations: u64,
}

struct Instance {
    h: [[Complex64; 2]; 2],
    alpha: [f64; 2],
    noise: [f64; 2],
    p_c: f64,
    p_max: f64,
}

impl Instance {
    fn direction(theta: f64, phi: f64) -> [Complex64; 2] {
        [Complex64::new(theta.cos(), 0.0), Complex64::from_polar(theta.sin(), phi)]
    }

    /// `|h_jᴴ u|²` for both users.
    fn gains(&self, u: &[Complex64; 2]) -> [f64; 2] {
        let g = |h: &[Complex64; 2]| (h[0].conj() * u[0] + h[1].conj() * u[1]).norm_sqr();
        [g(&self.h[0]), g(&self.h[1])]
    }

    /// `a[j][k] = |h_jᴴ u_k|²` with beam powers `p`.
    fn ee(&self, a1: [f64; 2], a2: [f64; 2], p: [f64; 2]) -> f64 {
        let s1 = p[0] * a1[0] / (p[1] * a2[0] + self.noise[0]);
        let s2 = p[1] * a2[1] / (p[0] * a1[1] + self.noise[1]);
        (self.alpha[0] * (1.0 + s1).log2() + self.alpha[1] * (1.0 + s2).log2()) / (p[0] + p[1] + self.p_c)
    }

    /// Objective of the 6-vector `(θ₁, φ₁, θ₂, φ₂, p₁, p₂)` after mapping
    /// back into the feasible box.
    fn eval(&self, x: &[f64; 6]) -> f64 {
        let u1 = Self::direction(x[0], x[1]);
        let u2 = Self::direction(x[2], x[3]);
        self.ee(self.gains(&u1), self.gains(&u2), [x[4], x[5]])
    }

    fn clamp(&self, x: &mut [f64; 6]) {
        x[0] = x[0].clamp(0.0, FRAC_PI_2);
        x[2] = x[2].clamp(0.0, FRAC_PI_2);
        x[4] = x[4].max(0.0);
        x[5] = x[5].max(0.0);
        let total = x[4] + x[5];
        if total > self.p_max {
            x[4] *= self.p_max / total;
            x[5] *= self.p_max / total;
        }
    }
}

/// Grid-search optimum of the weighted EE. Panics unless K = 2, N_T = 2.
pub fn brute_force_k2_nt2(sample: &ChannelSample) -> GridResult {
    let cfg = sample.config();
    assert!(cfg.k == 2 && cfg.n_t == 2, "verifier is defined for K = 2, N_T = 2 only");
    let inst = Instance {
        h: [
            [sample.user(0)[0], sample.user(0)[1]],
            [sample.user(1)[0], sample.user(1)[1]],
        ],
        alpha: [cfg.weights[0], cfg.weights[1]],
        noise: [cfg.noise_power[0], cfg.noise_power[1]],
        p_c: cfg.p_c,
        p_max: cfg.p_max,
    };

    let mut dirs = Vec::with_capacity((THETA_STEPS + 1) * PHI_STEPS);
    for t in 0..=THETA_STEPS {
        let theta = FRAC_PI_2 * t as f64 / THETA_STEPS as f64;
        for f in 0..PHI_STEPS {
            let phi = 2.0 * PI * f as f64 / PHI_STEPS as f64;
            dirs.push((theta, phi, inst.gains(&Instance::direction(theta, phi))));
        }
    }
    let mut powers = Vec::new();
    for i in 0..=POWER_STEPS {
        for j in 0..=POWER_STEPS - i {
            powers.push([
                cfg.p_max * i as f64 / POWER_STEPS as f64,
                cfg.p_max * j as f64 / POWER_STEPS as f64,
            ]);
        }
    }

    let mut evaluations = 0u64;
    // (ee, d1, d2, power index), best first
    let mut top: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(KEEP + 1);
    for (i1, d1) in dirs.iter().enumerate() {
        for (i2, d2) in dirs.iter().enumerate() {
            for (ip, p) in powers.iter().enumerate() {
                let ee = inst.ee(d1.2, d2.2, *p);
                if top.len() < KEEP || ee > top[top.len() - 1].0 {
                    let at = top.partition_point(|t| t.0 >= ee);
                    top.insert(at, (ee, i1, i2, ip));
                    top.truncate(KEEP);
                }
            }
            evaluations += powers.len() as u64;
        }
    }
    let coarse_ee = top[0].0;

    let base_step = [
        FRAC_PI_2 / THETA_STEPS as f64,
        2.0 * PI / PHI_STEPS as f64,
        FRAC_PI_2 / THETA_STEPS as f64,
        2.0 * PI / PHI_STEPS as f64,
        cfg.p_max / POWER_STEPS as f64,
        cfg.p_max / POWER_STEPS as f64,
    ];
    let mut best = (f64::MIN, [0.0; 6]);
    for &(ee, i1, i2, ip) in &top {
        let mut x = [dirs[i1].0, dirs[i1].1, dirs[i2].0, dirs[i2].1, powers[ip][0], powers[ip][1]];
        let mut fx = ee;
        let mut step = base_step;
        while step[0] > MIN_STEP || step[4] > MIN_STEP * cfg.p_max {
            let mut improved = None;
            for code in 0..729usize {
                let mut c = code;
                let mut cand = x;
                for (v, s) in cand.iter_mut().zip(&step) {
                    *v += (c % 3) as f64 * s - s;
                    c /= 3;
                }
                inst.clamp(&mut cand);
                let fc = inst.eval(&cand);
                evaluations += 1;
                if fc > improved.map_or(fx, |(f, _)| f) {
                    improved = Some((fc, cand));
                }
            }
            match improved {
                Some((f, c)) => {
                    fx = f;
                    x = c;
                }
                None => step.iter_mut().for_each(|s| *s *= 0.5),
            }
        }
        if fx > best.0 {
            best = (fx, x);
        }
    }

    let x = best.1;
    let u1 = Instance::direction(x[0], x[1]);
    let u2 = Instance::direction(x[2], x[3]);
    let (s1, s2) = (x[4].sqrt(), x[5].sqrt());
    let w = BeamformingMatrix::new(2, 2, vec![u1[0] * s1, u1[1] * s1, u2[0] * s2, u2[1] * s2])
        .expect("2 x 2 beamformer");
    GridResult {
        ee: best.0,
        coarse_ee,
        w,
        evaluations,
    }
}
