use super::ModelError;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Transformer,
    Gat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Kan,
    Mlp,
}

/// Encoder/decoder family (scalable in K) or the flat MLP baseline,
/// whose input and output widths are fixed to `users`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    EncoderDecoder,
    PlainMlp { users: usize },
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::Transformer => "transformer",
            EncoderKind::Gat => "gat",
        })
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DecoderKind::Kan => "kan",
            DecoderKind::Mlp => "mlp",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "transformer" | "tf" => Ok(EncoderKind::Transformer),
            "gat" => Ok(EncoderKind::Gat),
            other => Err(ModelError::Config(format!("unknown encoder '{other}'"))),
        }
    }
}

impl FromStr for DecoderKind {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kan" => Ok(DecoderKind::Kan),
            "mlp" => Ok(DecoderKind::Mlp),
            other => Err(ModelError::Config(format!("unknown decoder '{other}'"))),
        }
    }
}

/// Network hyperparameters. None of them depend on the user count except
/// for the flat-MLP baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub encoder_kind: EncoderKind,
    pub decoder_kind: DecoderKind,
    /// Embedding width D.
    pub d: usize,
    /// Feed-forward width D′.
    pub d_ff: usize,
    pub l_layers: usize,
    pub t_layers: usize,
    /// Attention heads per encoder layer.
    pub heads: Vec<usize>,
    /// Decoder hidden widths F(2..T); there are `t_layers - 1` of them.
    pub kan_hidden_dims: Vec<usize>,
    /// Spline coefficients per KAN edge.
    pub spline_count: usize,
    pub spline_degree: usize,
    pub grid_range: (f64, f64),
    /// Adds the attention sub-layer output (instead of the feed-forward
    /// output) as the second residual of each encoder layer.
    pub conventional_residual: bool,
    /// Hidden widths of the flat-MLP baseline.
    pub mlp_hidden: Vec<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            architecture: Architecture::EncoderDecoder,
            encoder_kind: EncoderKind::Transformer,
            decoder_kind: DecoderKind::Kan,
            d: 64,
            d_ff: 128,
            l_layers: 2,
            t_layers: 2,
            heads: vec![4, 4],
            kan_hidden_dims: vec![64],
            spline_count: 8,
            spline_degree: 3,
            grid_range: (-2.0, 2.0),
            conventional_residual: false,
            mlp_hidden: vec![128, 128],
        }
    }
}

impl ModelConfig {
    pub fn with_kinds(encoder: EncoderKind, decoder: DecoderKind) -> Self {
        Self {
            encoder_kind: encoder,
            decoder_kind: decoder,
            ..Self::default()
        }
    }

    pub fn plain_mlp(users: usize) -> Self {
        Self {
            architecture: Architecture::PlainMlp { users },
            ..Self::default()
        }
    }

    /// Short identifier used in reports, e.g. `transformer+kan`.
    pub fn model_id(&self) -> String {
        match self.architecture {
            Architecture::EncoderDecoder => format!("{}+{}", self.encoder_kind, self.decoder_kind),
            Architecture::PlainMlp { users } => format!("plain-mlp-k{users}"),
        }
    }

    pub fn is_scalable(&self) -> bool {
        self.architecture == Architecture::EncoderDecoder
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::Config(m));
        if let Architecture::PlainMlp { users } = self.architecture {
            if users == 0 {
                return bad("plain MLP needs users >= 1".into());
            }
            if self.mlp_hidden.contains(&0) {
                return bad("mlp_hidden widths must be >= 1".into());
            }
            return Ok(());
        }
        if self.d == 0 || self.d_ff == 0 {
            return bad("d and d_ff must be >= 1".into());
        }
        if self.l_layers == 0 || self.t_layers == 0 {
            return bad("l_layers and t_layers must be >= 1".into());
        }
        if self.heads.len() != self.l_layers {
            return bad(format!(
                "heads lists {} entries for {} encoder layers",
                self.heads.len(),
                self.l_layers
            ));
        }
        if let Some(&m) = self.heads.iter().find(|&&m| m == 0 || !self.d.is_multiple_of(m)) {
            return bad(format!("d = {} is not divisible by {m} heads", self.d));
        }
        if self.kan_hidden_dims.len() + 1 != self.t_layers {
            return bad(format!(
                "kan_hidden_dims lists {} widths, {} decoder layers need {}",
                self.kan_hidden_dims.len(),
                self.t_layers,
                self.t_layers - 1
            ));
        }
        if self.kan_hidden_dims.contains(&0) {
            return bad("kan_hidden_dims widths must be >= 1".into());
        }
        if self.spline_degree < 1 {
            return bad("spline_degree must be >= 1".into());
        }
        if self.spline_count <= self.spline_degree {
            return bad("spline_count must exceed spline_degree".into());
        }
        let (lo, hi) = self.grid_range;
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return bad("grid range needs lo < hi".into());
        }
        Ok(())
    }

    /// Decoder layer widths `[D, F(2), ..., 2·n_t]`.
    pub fn decoder_dims(&self, n_t: usize) -> Vec<usize> {
        let mut dims = vec![self.d];
        dims.extend(&self.kan_hidden_dims);
        dims.push(2 * n_t);
        dims
    }

    /// `key = value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        match self.architecture {
            Architecture::EncoderDecoder => line("architecture", "encoder-decoder".into()),
            Architecture::PlainMlp { users } => {
                line("architecture", "plain-mlp".into());
                line("plain_mlp_users", users.to_string());
            }
        }
        line("encoder", self.encoder_kind.to_string());
        line("decoder", self.decoder_kind.to_string());
        line("d", self.d.to_string());
        line("d_ff", self.d_ff.to_string());
        line("l_layers", self.l_layers.to_string());
        line("t_layers", self.t_layers.to_string());
        line("heads", list(&self.heads));
        line("kan_hidden", list(&self.kan_hidden_dims));
        line("spline_count", self.spline_count.to_string());
        line("spline_degree", self.spline_degree.to_string());
        // {:?} prints the shortest string that parses back to the same f64
        line("grid_lo", format!("{:?}", self.grid_range.0));
        line("grid_hi", format!("{:?}", self.grid_range.1));
        line("conventional_residual", self.conventional_residual.to_string());
        line("mlp_hidden", list(&self.mlp_hidden));
        out
    }

    /// Applies recognised keys on top of `self`; unknown keys are returned.
    pub fn apply_kv(&mut self, map: &BTreeMap<String, String>) -> Result<Vec<String>, ModelError> {
        let mut unknown = Vec::new();
        let mut users = match self.architecture {
            Architecture::PlainMlp { users } => users,
            Architecture::EncoderDecoder => 0,
        };
        let mut arch = None;
        for (key, value) in map {
            let v = value.trim();
            match key.as_str() {
                "architecture" => arch = Some(v.to_string()),
                "plain_mlp_users" => users = parse(key, v)?,
                "encoder" => self.encoder_kind = v.parse()?,
                "decoder" => self.decoder_kind = v.parse()?,
                "d" => self.d = parse(key, v)?,
                "d_ff" => self.d_ff = parse(key, v)?,
                "l_layers" => self.l_layers = parse(key, v)?,
                "t_layers" => self.t_layers = parse(key, v)?,
                "heads" => self.heads = parse_list(key, v)?,
                "kan_hidden" => self.kan_hidden_dims = parse_list(key, v)?,
                "spline_count" => self.spline_count = parse(key, v)?,
                "spline_degree" => self.spline_degree = parse(key, v)?,
                "grid_lo" => self.grid_range.0 = parse(key, v)?,
                "grid_hi" => self.grid_range.1 = parse(key, v)?,
                "conventional_residual" => self.conventional_residual = parse(key, v)?,
                "mlp_hidden" => self.mlp_hidden = parse_list(key, v)?,
                _ => unknown.push(key.clone()),
            }
        }
        // a uniform heads list follows the layer count
        if let Some(&m) = self.heads.first() {
            if self.heads.iter().all(|&h| h == m) {
                self.heads = vec![m; self.l_layers];
            }
        }
        match arch.as_deref() {
            None => {
                if let Architecture::PlainMlp { .. } = self.architecture {
                    self.architecture = Architecture::PlainMlp { users };
                }
            }
            Some("encoder-decoder") => self.architecture = Architecture::EncoderDecoder,
            Some("plain-mlp") => self.architecture = Architecture::PlainMlp { users },
            Some(other) => {
                return Err(ModelError::Config(format!("unknown architecture '{other}'")))
            }
        }
        Ok(unknown)
    }

    pub fn from_kv(text: &str) -> Result<Self, ModelError> {
        let map = parse_kv(text)?;
        let mut cfg = Self::default();
        let unknown = cfg.apply_kv(&map)?;
        if let Some(key) = unknown.first() {
            return Err(ModelError::Config(format!("unknown model key '{key}'")));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut map = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected key = value", n + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
    v.parse()
        .map_err(|_| ModelError::Config(format!("bad value '{v}' for '{key}'")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, ModelError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::plain_mlp(2).validate().unwrap();
    }

    #[test]
    fn kv_round_trip() {
        let mut cfg = ModelConfig::with_kinds(EncoderKind::Gat, DecoderKind::Mlp);
        cfg.grid_range = (-1.7, 2.3);
        cfg.conventional_residual = true;
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        let plain = ModelConfig::plain_mlp(3);
        assert_eq!(ModelConfig::from_kv(&plain.to_kv()).unwrap(), plain);
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig {
            heads: vec![3, 4],
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rejects_bad_grid_and_degree() {
        let cfg = ModelConfig {
            grid_range: (1.0, 1.0),
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ModelConfig {
            spline_degree: 0,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_heads_value_broadcasts() {
        let cfg = ModelConfig::from_kv("heads = 2\nl_layers = 3").unwrap();
        assert_eq!(cfg.heads, vec![2, 2, 2]);
    }
}
