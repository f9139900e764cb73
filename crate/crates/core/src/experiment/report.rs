use crate::model::{DecoderKind, EncoderKind};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const REPORT_HEADER: &str = "model_id,dataset_id,k_train,k_test,mean_ee,oracle_mean_ee,optimality_ratio_pct,latency_mean_ms,latency_p50_ms,latency_p95_ms,latency_passes,samples,seed,oracle_method";
pub const TRANSFER_HEADER: &str = "k_train,k_test,epochs,scaling_pct,fine_tuned_pct,retrained_pct,seed";
pub const ABLATION_HEADER: &str = "row,encoder,decoder,k_train,k_test,value_pct,seed";
pub const BENCH_HEADER: &str = "model_id,n_t,k_test,samples,passes,latency_mean_ms,latency_p50_ms,latency_p95_ms,oracle_mean_ms,oracle_samples,oracle_method";

/// A record with a fixed CSV header.
pub trait CsvRecord {
    const HEADER: &'static str;
    fn csv_row(&self) -> String;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model_id: String,
    pub dataset_id: String,
    pub k_train: usize,
    pub k_test: usize,
    pub mean_ee: f64,
    pub oracle_mean_ee: f64,
    pub optimality_ratio_pct: f64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub latency_passes: usize,
    pub samples: usize,
    pub seed: u64,
    pub oracle_method: String,
}

impl CsvRecord for EvalReport {
    const HEADER: &'static str = REPORT_HEADER;
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.dataset_id,
            self.k_train,
            self.k_test,
            self.mean_ee,
            self.oracle_mean_ee,
            self.optimality_ratio_pct,
            self.latency_mean_ms,
            self.latency_p50_ms,
            self.latency_p95_ms,
            self.latency_passes,
            self.samples,
            self.seed,
            self.oracle_method
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub k_train: usize,
    pub k_test: usize,
    pub epochs: usize,
    pub scaling_pct: f64,
    pub fine_tuned_pct: f64,
    pub retrained_pct: Option<f64>,
    pub seed: u64,
}

impl CsvRecord for TransferRow {
    const HEADER: &'static str = TRANSFER_HEADER;
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.k_train,
            self.k_test,
            self.epochs,
            self.scaling_pct,
            self.fine_tuned_pct,
            self.retrained_pct.map_or(String::new(), |v| v.to_string()),
            self.seed
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub model_id: String,
    pub n_t: usize,
    pub k_test: usize,
    pub samples: usize,
    pub passes: usize,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
    pub oracle_mean_ms: f64,
    pub oracle_samples: usize,
    pub oracle_method: String,
}

impl CsvRecord for BenchRow {
    const HEADER: &'static str = BENCH_HEADER;
    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.model_id,
            self.n_t,
            self.k_test,
            self.samples,
            self.passes,
            self.latency_mean_ms,
            self.latency_p50_ms,
            self.latency_p95_ms,
            self.oracle_mean_ms,
            self.oracle_samples,
            self.oracle_method
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub encoder: String,
    pub decoder: String,
    /// Optimality ratio (%) per entry of `k_tests`.
    pub ratios_pct: Vec<f64>,
}

/// The encoder × decoder grid plus the average-gain rows: transformer over
/// GAT averaged across decoders, KAN over MLP averaged across encoders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub k_train: usize,
    pub k_tests: Vec<usize>,
    pub seed: u64,
    pub cells: Vec<AblationCell>,
    pub encoder_gain_pct: Option<Vec<f64>>,
    pub decoder_gain_pct: Option<Vec<f64>>,
}

impl AblationReport {
    pub fn new(
        k_train: usize,
        k_tests: Vec<usize>,
        seed: u64,
        cells: Vec<(EncoderKind, DecoderKind, Vec<f64>)>,
    ) -> Self {
        let find = |e: EncoderKind, d: DecoderKind| {
            cells.iter().find(|c| c.0 == e && c.1 == d).map(|c| &c.2)
        };
        let gain = |pairs: [(Option<&Vec<f64>>, Option<&Vec<f64>>); 2]| {
            let present: Vec<_> = pairs
                .iter()
                .filter_map(|(a, b)| Some((a.as_ref()?, b.as_ref()?)))
                .collect();
            if present.is_empty() {
                return None;
            }
            Some(
                (0..k_tests.len())
                    .map(|j| present.iter().map(|(a, b)| a[j] - b[j]).sum::<f64>() / present.len() as f64)
                    .collect(),
            )
        };
        use DecoderKind::{Kan, Mlp};
        use EncoderKind::{Gat, Transformer};
        let encoder_gain_pct = gain([
            (find(Transformer, Mlp), find(Gat, Mlp)),
            (find(Transformer, Kan), find(Gat, Kan)),
        ]);
        let decoder_gain_pct = gain([
            (find(Gat, Kan), find(Gat, Mlp)),
            (find(Transformer, Kan), find(Transformer, Mlp)),
        ]);
        Self {
            k_train,
            k_tests,
            seed,
            cells: cells
                .into_iter()
                .map(|(e, d, ratios_pct)| AblationCell {
                    encoder: e.to_string(),
                    decoder: d.to_string(),
                    ratios_pct,
                })
                .collect(),
            encoder_gain_pct,
            decoder_gain_pct,
        }
    }

    pub fn cell(&self, encoder: EncoderKind, decoder: DecoderKind) -> Option<&AblationCell> {
        let (e, d) = (encoder.to_string(), decoder.to_string());
        self.cells.iter().find(|c| c.encoder == e && c.decoder == d)
    }

    /// Mean ratio of one cell over the listed test user counts.
    pub fn mean_ratio(&self, encoder: EncoderKind, decoder: DecoderKind, k_tests: &[usize]) -> Option<f64> {
        let cell = self.cell(encoder, decoder)?;
        let picked: Vec<f64> = self
            .k_tests
            .iter()
            .zip(&cell.ratios_pct)
            .filter(|(k, _)| k_tests.contains(k))
            .map(|(_, &r)| r)
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }

    /// Long-format rows under [`ABLATION_HEADER`].
    pub fn csv_rows(&self) -> Vec<String> {
        let mut rows = Vec::new();
        for c in &self.cells {
            for (k, r) in self.k_tests.iter().zip(&c.ratios_pct) {
                rows.push(format!("cell,{},{},{},{k},{r},{}", c.encoder, c.decoder, self.k_train, self.seed));
            }
        }
        for (name, gains) in [("encoder_gain", &self.encoder_gain_pct), ("decoder_gain", &self.decoder_gain_pct)] {
            for (k, g) in self.k_tests.iter().zip(gains.iter().flatten()) {
                rows.push(format!("{name},-,-,{},{k},{g},{}", self.k_train, self.seed));
            }
        }
        rows
    }
}

/// Appends `rows` to the CSV at `path`, writing `header` first when the file
/// is new or empty. An existing file with a different header is an error.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> std::io::Result<()> {
    let existing = match std::fs::File::open(path) {
        Ok(f) => {
            let mut first = String::new();
            std::io::BufReader::new(f).read_line(&mut first)?;
            Some(first)
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(e),
    };
    let fresh = existing.as_deref().is_none_or(str::is_empty);
    if let Some(first) = existing.as_deref().filter(|f| !f.is_empty()) {
        if first.trim_end() != header {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("{} has header '{}', expected '{header}'", path.display(), first.trim_end()),
            ));
        }
    }
    let file = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut out = std::io::BufWriter::new(file);
    if fresh {
        writeln!(out, "{header}")?;
    }
    for r in rows {
        writeln!(out, "{r}")?;
    }
    out.flush()
}
