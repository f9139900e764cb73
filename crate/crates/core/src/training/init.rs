use crate::model::{ParamRole, ParameterSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of initial spline coefficients.
pub const SPLINE_INIT_STD: f64 = 0.1;

/// Factor applied to the initial output-layer tensors (γ excepted).
pub const OUTPUT_INIT_SCALE: f64 = 0.05;

/// Layer prefix (`kdl1.`, `mlp1.`, `fc2.`) and index of a decoder tensor name.
fn decoder_layer(name: &str) -> Option<(&str, usize)> {
    let (head, _) = name.split_once('.')?;
    ["kdl", "mlp", "fc"].iter().find_map(|p| {
        let t = head.strip_prefix(p)?.parse().ok()?;
        Some((head, t))
    })
}

/// He initialisation: dense weights and β ~ N(0, 2 / fan_in) with
/// fan_in = rows, spline coefficients ~ N(0, 0.1²), γ = 1. The last decoder
/// layer is then scaled by [`OUTPUT_INIT_SCALE`].
pub fn he_init(params: &mut ParameterSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = params
        .iter()
        .filter_map(|p| decoder_layer(&p.name))
        .max_by_key(|&(_, t)| t)
        .map(|(head, _)| head.to_string());
    for p in params.iter_mut() {
        let fan_in = p.tensor.rows().max(1) as f64;
        let role = p.role;
        let output = last.as_deref().is_some_and(|l| decoder_layer(&p.name).is_some_and(|(h, _)| h == l));
        let data = p.tensor.data_mut();
        match role {
            ParamRole::Weight | ParamRole::Beta => {
                let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("finite std");
                data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
            ParamRole::SplineCoef => {
                let normal = Normal::new(0.0, SPLINE_INIT_STD).expect("finite std");
                data.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
            }
            ParamRole::Gamma => data.fill(1.0),
        }
        if output && role != ParamRole::Gamma {
            data.iter_mut().for_each(|v| *v *= OUTPUT_INIT_SCALE);
        }
    }
}
