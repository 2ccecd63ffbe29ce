//! Resumable chain snapshots.
//!
//! Layout: magic `LHFI1`, u32 version, u64 header length, JSON header,
//! u64 draw count, then the kept draws as little-endian f64.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ChainState;
use crate::sampler::Adaptive;
use crate::stochastics::RngPosition;

const MAGIC: &[u8; 5] = b"LHFI1";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_hash: String,
    pub chain_id: u64,
    /// Sweeps completed.
    pub sweep: usize,
    pub rng: RngPosition,
    pub state: ChainState,
    pub phi: Adaptive,
    pub gamma: Adaptive,
    pub scale: Adaptive,
    #[serde(skip)]
    pub draws: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(self)?;
        let mut out = Vec::with_capacity(header.len() + self.draws.len() * 8 + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.draws.len() as u64).to_le_bytes());
        for v in &self.draws {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 17 || &bytes[..5] != MAGIC {
            return Err(bad("missing LHFI1 header"));
        }
        let version = u32::from_le_bytes(bytes[5..9].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        let hend = 17usize.checked_add(hlen).filter(|&e| e + 8 <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let mut cp: Checkpoint = serde_json::from_slice(&bytes[17..hend])?;
        let count = u64::from_le_bytes(bytes[hend..hend + 8].try_into().unwrap()) as usize;
        let body = &bytes[hend + 8..];
        if body.len() != count.checked_mul(8).ok_or_else(|| bad("bad draw count"))? {
            return Err(bad("draw block length mismatch"));
        }
        cp.draws = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(cp)
    }

    /// Write through a temporary file and rename, so a crash never leaves a
    /// half-written checkpoint in place.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stochastics::{RngStream, SpdMatrix};
    use nalgebra::DVector;

    fn sample() -> Checkpoint {
        let rng = RngStream::new(9, 2);
        Checkpoint {
            config_hash: "abc".into(),
            chain_id: 2,
            sweep: 17,
            rng: rng.position(),
            state: ChainState {
                h: DVector::from_vec(vec![0.1, -1.0 / 3.0]),
                a: DVector::from_vec(vec![std::f64::consts::PI]),
                sigma_y: SpdMatrix::scaled_identity(1, 0.7).unwrap(),
                beta: DVector::from_vec(vec![1e-300, 2.0]),
                sigma2_h: 0.2,
                phi: 1.5,
                gamma: DVector::zeros(0),
                xi: DVector::zeros(0),
                knots: None,
            },
            phi: Adaptive::new(0.5, 0.44),
            gamma: Adaptive::new(0.1, 0.234),
            scale: Adaptive::new(0.05, 0.44),
            draws: vec![1.0, f64::MIN_POSITIVE, -0.0, 1.0 / 7.0],
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let cp = sample();
        let back = Checkpoint::from_bytes(&cp.to_bytes().unwrap()).unwrap();
        assert_eq!(cp, back);
        assert!(cp.draws.iter().zip(&back.draws).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn bad_magic_and_truncation_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&wrong), Err(Error::Checkpoint(_))));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn save_load_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        let cp = sample();
        cp.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), cp);
    }
}
