//! Model checkpoint file.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CADK"
//!      4     1  version (1)
//!      5     2  hidden channels (u16 LE)
//!      7     2  embedding dim (u16 LE)
//!      9     4  diffusion steps T (u32 LE)
//!     13     8  beta_start (f64 LE)
//!     21     8  beta_end (f64 LE)
//!     29     1  conditioning scale s
//!     30     1  conditioning bit-depth n
//!     31     4  parameter count (u32 LE)
//!     35   4·P  parameters (f32 LE)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::net::{Architecture, DenoiserParams};
use super::schedule::ScheduleParams;
use super::Real;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CADK";
pub const CHECKPOINT_VERSION: u8 = 1;
const FIXED_BYTES: usize = 35;

/// A trained denoiser together with the schedule and encoder setting it was trained for.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: Architecture,
    pub schedule: ScheduleParams,
    pub s: u8,
    pub n: u8,
    pub params: Vec<f32>,
}

impl Checkpoint {
    pub fn from_params<R: Real>(params: &DenoiserParams<R>, schedule: ScheduleParams, s: u8, n: u8) -> Self {
        Checkpoint { arch: params.architecture(), schedule, s, n, params: params.as_slice().iter().map(|v| v.as_f64() as f32).collect() }
    }

    /// Rebuilds the denoiser with the checkpoint's schedule attached.
    pub fn denoiser<R: Real>(&self) -> Result<DenoiserParams<R>> {
        let params = DenoiserParams::from_flat(self.arch, self.params.iter().map(|&v| R::from_f64(f64::from(v))).collect())?;
        Ok(params.with_schedule(&self.schedule.build()?))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FIXED_BYTES + 4 * self.params.len());
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(self.arch.hidden as u16).to_le_bytes());
        out.extend_from_slice(&(self.arch.emb_dim as u16).to_le_bytes());
        out.extend_from_slice(&(self.schedule.steps as u32).to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_start.to_le_bytes());
        out.extend_from_slice(&self.schedule.beta_end.to_le_bytes());
        out.push(self.s);
        out.push(self.n);
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        self.params.iter().for_each(|p| out.extend_from_slice(&p.to_le_bytes()));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || bytes[..4] != CHECKPOINT_MAGIC {
            return Err(Error::Parse("not a checkpoint (bad magic)".into()));
        }
        if bytes.len() < FIXED_BYTES {
            return Err(Error::CorruptData(format!("checkpoint header truncated at {} bytes", bytes.len())));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(bytes[4]));
        }
        let u16_at = |i: usize| usize::from(u16::from_le_bytes([bytes[i], bytes[i + 1]]));
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let f64_at = |i: usize| f64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
        let arch = Architecture { hidden: u16_at(5), emb_dim: u16_at(7) };
        let schedule = ScheduleParams { steps: u32_at(9), beta_start: f64_at(13), beta_end: f64_at(21) };
        let (s, n) = (bytes[29], bytes[30]);
        let count = u32_at(31);
        if count != arch.param_count() {
            return Err(Error::CorruptData(format!("architecture needs {} parameters, file declares {count}", arch.param_count())));
        }
        let body = &bytes[FIXED_BYTES..];
        if body.len() != 4 * count {
            return Err(Error::CorruptData(format!("expected {} parameter bytes, found {}", 4 * count, body.len())));
        }
        let params = body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        schedule.build()?;
        Ok(Checkpoint { arch, schedule, s, n, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let arch = Architecture { hidden: 3, emb_dim: 4 };
        let p = DenoiserParams::<f64>::init(arch, 3);
        let ck = Checkpoint::from_params(&p, ScheduleParams::scaled(50), 2, 4);
        let bytes = ck.to_bytes();
        assert_eq!(bytes.len(), 35 + 4 * arch.param_count());
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let q: DenoiserParams<f32> = back.denoiser().unwrap();
        assert_eq!(q.as_slice(), &ck.params[..]);
        assert!(q.has_schedule());

        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..20]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Parse(_))));
        let mut bad = bytes;
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::UnsupportedVersion(9))));
    }
}
