//! Binary checkpoint format.
//!
//! ```text
//! magic   8 bytes  "DWARLCKP"
//! version u32 LE
//! hlen    u32 LE   length of the JSON header
//! header  hlen bytes  {"spec": .., "obs": .., "scales": ..}
//! count   u64 LE   number of parameters
//! params  count × f64 LE
//! ```
//!
//! Trailing bytes, a short file, a parameter count that does not match the
//! header's network, or an unknown version are all rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkSpec};
use super::Policy;
use crate::error::{Error, Result};
use crate::observation::{NormScales, ObservationConfig};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DWARLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    obs: ObservationConfig,
    scales: NormScales,
}

pub fn encode(policy: &Policy) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        spec: policy.net.spec().clone(),
        obs: policy.obs,
        scales: policy.scales,
    })
    .expect("header serializes");
    let params = policy.net.params();
    let mut out = Vec::with_capacity(24 + header.len() + 8 * params.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for p in params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Checkpoint(format!("truncated while reading {what}"))),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Policy> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(r.take(4, "header length")?.try_into().expect("4 bytes"));
    let header: Header = serde_json::from_slice(r.take(hlen as usize, "header")?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().expect("8 bytes"));
    let expected = header.spec.param_count();
    if count != expected as u64 {
        return Err(Error::Checkpoint(format!(
            "parameter count {count} does not match network ({expected})"
        )));
    }
    let raw = r.take(8 * expected, "parameters")?;
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let actions = header.obs.actions();
    if header.spec.actions != actions {
        return Err(Error::Checkpoint(format!(
            "network has {} actions but k={} needs {actions}",
            header.spec.actions, header.obs.k
        )));
    }
    Ok(Policy {
        net: Network::from_params(header.spec, params)?,
        obs: header.obs,
        scales: header.scales,
    })
}

pub fn save_checkpoint(policy: &Policy, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(policy)).map_err(|e| Error::io(path, e))
}

/// Loads a checkpoint. With `expected` set, its `k`, `n` and channel layout
/// must match.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ObservationConfig>) -> Result<Policy> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let policy = decode(&bytes)?;
    if let Some(cfg) = expected {
        let got = &policy.obs;
        if got.k != cfg.k || got.n != cfg.n || got.layout != cfg.layout {
            return Err(Error::Checkpoint(format!(
                "checkpoint expects k={} n={} {:?} but configuration has k={} n={} {:?}",
                got.k, got.n, got.layout, cfg.k, cfg.n, cfg.layout
            )));
        }
    }
    Ok(policy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::RobotLimits;
    use crate::policy::NetworkSize;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy() -> Policy {
        let obs = ObservationConfig {
            k: 3,
            n: 2,
            ..ObservationConfig::default()
        };
        let size = NetworkSize::Custom {
            conv: vec![2],
            hidden: vec![4],
        };
        Policy::new(&size, obs, &RobotLimits::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = policy();
        assert_eq!(decode(&encode(&p)).unwrap(), p);
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = encode(&policy());
        for cut in [0, 5, 12, 20, bytes.len() - 1] {
            assert!(matches!(decode(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode(&policy());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn mismatched_k_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ckpt");
        save_checkpoint(&policy(), &path).unwrap();
        let other = ObservationConfig {
            k: 4,
            n: 2,
            ..ObservationConfig::default()
        };
        let err = load_checkpoint(&path, Some(&other)).unwrap_err();
        assert!(err.to_string().contains("k=3"));
        assert!(load_checkpoint(&path, None).is_ok());
    }
}
