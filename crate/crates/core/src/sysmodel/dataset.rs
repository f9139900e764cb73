//! Binary dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "KFDS"
//! 4       4     version (u32) = 1
//! 8       4     n_t (u32)
//! 12      4     k (u32)
//! 16      8     count (u64)
//! 24      8     noise_power (f64)
//! 32      8     p_max (f64)
//! 40      8     p_c (f64)
//! 48      ...   count records of k·n_t (re f64, im f64) pairs,
//!               row-major by user then antenna
//! ```

use super::{ChannelSample, SysError, SystemConfig};
use num_complex::Complex64;
use std::path::Path;
use std::sync::Arc;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"KFDS";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 48;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("bad magic at offset 0: expected \"KFDS\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {found} at offset 4 (expected {VERSION})")]
    Version { found: u32 },
    #[error("truncated file: needed {needed} bytes at offset {offset}, file has {len}")]
    Truncated { offset: usize, needed: usize, len: usize },
    #[error("trailing data after offset {0}")]
    Trailing(usize),
    #[error("invalid header: {0}")]
    Header(#[from] SysError),
    #[error("dataset files store one noise power for all users and unit weights")]
    NonUniform,
    #[error("dataset is empty")]
    Empty,
    #[error("samples do not share one system configuration")]
    Mixed,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Channel samples drawn under one system configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    config: Arc<SystemConfig>,
    samples: Vec<ChannelSample>,
}

impl Dataset {
    pub fn new(samples: Vec<ChannelSample>) -> Result<Self, DatasetError> {
        let first = samples.first().ok_or(DatasetError::Empty)?;
        let config = Arc::clone(first.shared_config());
        if samples.iter().any(|s| s.config() != &*config) {
            return Err(DatasetError::Mixed);
        }
        Ok(Self { config, samples })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn samples(&self) -> &[ChannelSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ChannelSample> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    pub fn n_t(&self) -> usize {
        self.config.n_t
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        let cfg = &*self.config;
        let noise = cfg.noise_power[0];
        if cfg.noise_power.iter().any(|&s| s != noise) || cfg.weights.iter().any(|&a| a != 1.0) {
            return Err(DatasetError::NonUniform);
        }
        let per = cfg.k * cfg.n_t;
        let mut out = Vec::with_capacity(HEADER_LEN + self.samples.len() * per * 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.n_t as u32).to_le_bytes());
        out.extend_from_slice(&(cfg.k as u32).to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        out.extend_from_slice(&noise.to_le_bytes());
        out.extend_from_slice(&cfg.p_max.to_le_bytes());
        out.extend_from_slice(&cfg.p_c.to_le_bytes());
        for s in &self.samples {
            for z in s.h() {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        if &magic != MAGIC {
            return Err(DatasetError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DatasetError::Version { found: version });
        }
        let n_t = r.u32()? as usize;
        let k = r.u32()? as usize;
        let count = r.u64()? as usize;
        let noise = r.f64()?;
        let p_max = r.f64()?;
        let p_c = r.f64()?;
        let config = Arc::new(SystemConfig::uniform(n_t, k, p_max, p_c, noise)?);
        if count == 0 {
            return Err(DatasetError::Empty);
        }
        let per = k * n_t;
        let needed = count
            .checked_mul(per * 16)
            .ok_or(DatasetError::Truncated {
                offset: HEADER_LEN,
                needed: usize::MAX,
                len: bytes.len(),
            })?;
        if bytes.len() - r.pos < needed {
            return Err(DatasetError::Truncated {
                offset: r.pos,
                needed,
                len: bytes.len(),
            });
        }
        let mut samples = Vec::with_capacity(count);
        for _ in 0..count {
            let mut h = Vec::with_capacity(per);
            for _ in 0..per {
                let re = r.f64()?;
                let im = r.f64()?;
                h.push(Complex64::new(re, im));
            }
            samples.push(ChannelSample::new(Arc::clone(&config), h)?);
        }
        if r.pos != bytes.len() {
            return Err(DatasetError::Trailing(r.pos));
        }
        Ok(Self { config, samples })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.bytes.len() - self.pos < n {
            return Err(DatasetError::Truncated {
                offset: self.pos,
                needed: n,
                len: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_dataset(dataset: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    std::fs::write(path, dataset.to_bytes()?)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    Dataset::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::generate_rayleigh;

    fn small() -> Dataset {
        let cfg = SystemConfig::standard(3, 2).unwrap();
        Dataset::new(generate_rayleigh(&cfg, 4, 9).unwrap()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let ds = small();
        let bytes = ds.to_bytes().unwrap();
        assert_eq!(bytes.len(), HEADER_LEN + 4 * 6 * 16);
        let back = Dataset::from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.kfds");
        let ds = small();
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let mut bytes = small().to_bytes().unwrap();
        bytes[0] = b'X';
        assert!(matches!(Dataset::from_bytes(&bytes), Err(DatasetError::BadMagic(_))));
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = small().to_bytes().unwrap();
        bytes[4] = 2;
        assert!(matches!(
            Dataset::from_bytes(&bytes),
            Err(DatasetError::Version { found: 2 })
        ));
    }

    #[test]
    fn overstated_count_is_truncation() {
        let mut bytes = small().to_bytes().unwrap();
        bytes[16..24].copy_from_slice(&10u64.to_le_bytes());
        let err = Dataset::from_bytes(&bytes).unwrap_err();
        match err {
            DatasetError::Truncated { offset, .. } => assert_eq!(offset, HEADER_LEN),
            other => panic!("unexpected {other}"),
        }
        assert!(err_message_names_offset(&bytes));
    }

    fn err_message_names_offset(bytes: &[u8]) -> bool {
        Dataset::from_bytes(bytes)
            .unwrap_err()
            .to_string()
            .contains("offset 48")
    }

    #[test]
    fn short_header_is_truncation() {
        let bytes = small().to_bytes().unwrap();
        assert!(matches!(
            Dataset::from_bytes(&bytes[..20]),
            Err(DatasetError::Truncated { offset: 16, .. })
        ));
    }

    #[test]
    fn per_user_noise_cannot_be_written() {
        let mut cfg = SystemConfig::standard(2, 2).unwrap();
        cfg.noise_power = vec![1.0, 2.0];
        let samples = generate_rayleigh(&cfg, 1, 1).unwrap();
        let ds = Dataset::new(samples).unwrap();
        assert!(matches!(ds.to_bytes(), Err(DatasetError::NonUniform)));
    }
}
