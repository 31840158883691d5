//! Checkpoint files: `MQC1`, a u32 little-endian header length, a JSON
//! header, then every state value as a little-endian f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{build, Architecture, Network};

pub const MAGIC: [u8; 4] = *b"MQC1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    architecture: Architecture,
    channels: Vec<usize>,
    input_size: usize,
    num_classes: usize,
    seed: u64,
    steps: u64,
    /// Number of f32 values in the blob.
    values: usize,
}

pub fn checkpoint_bytes(net: &Network) -> Result<Vec<u8>> {
    let state = net.state();
    let header = Header {
        version: CHECKPOINT_VERSION,
        architecture: net.arch,
        channels: net.channels.clone(),
        input_size: net.input_size,
        num_classes: net.num_classes,
        seed: net.seed,
        steps: net.steps,
        values: state.iter().map(|s| s.len()).sum(),
    };
    let json = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::LengthMismatch("header longer than 4 GiB".into()))?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * header.values);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for v in state.into_iter().flatten() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, section: &'static str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Truncated {
            section,
            expected: n,
            available: bytes.len(),
        });
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn parse_checkpoint(mut bytes: &[u8]) -> Result<Network> {
    let magic: [u8; 4] = take(&mut bytes, 4, "magic")?.try_into().expect("4 bytes");
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let len = u32::from_le_bytes(take(&mut bytes, 4, "header length")?.try_into().expect("4 bytes"));
    let header: Header = serde_json::from_slice(take(&mut bytes, len as usize, "header")?)?;
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let mut net = build::<f32>(
        header.architecture,
        header.num_classes,
        header.input_size,
        &header.channels,
        header.seed,
    )?;
    let expected: usize = net.state().iter().map(|s| s.len()).sum();
    if header.values != expected {
        return Err(Error::LengthMismatch(format!(
            "header declares {} values but {} {:?} needs {expected}",
            header.values, header.architecture, header.channels
        )));
    }
    let blob = take(&mut bytes, 4 * expected, "parameters")?;
    if !bytes.is_empty() {
        return Err(Error::LengthMismatch(format!(
            "{} trailing bytes after parameters",
            bytes.len()
        )));
    }
    let mut values = blob
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
    for tensor in net.state_mut() {
        for (dst, src) in tensor.iter_mut().zip(&mut values) {
            *dst = src;
        }
    }
    net.steps = header.steps;
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_bytes(net)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    parse_checkpoint(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_convnet4, build_resnet10lite, DEFAULT_CHANNEL_PLAN};

    fn perturbed(mut net: Network) -> Network {
        for (i, t) in net.state_mut().into_iter().enumerate() {
            for (j, v) in t.iter_mut().enumerate() {
                *v += ((i * 31 + j) % 17) as f32 * 0.01;
            }
        }
        net.steps = 42;
        net
    }

    #[test]
    fn round_trip_is_exact() {
        for net in [
            perturbed(build_convnet4(3, 32, DEFAULT_CHANNEL_PLAN, 5).unwrap()),
            perturbed(build_resnet10lite(2, 32, 4, 6).unwrap()),
        ] {
            let bytes = checkpoint_bytes(&net).unwrap();
            assert_eq!(parse_checkpoint(&bytes).unwrap(), net);
        }
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let net = build_convnet4::<f32>(2, 32, DEFAULT_CHANNEL_PLAN, 1).unwrap();
        let good = checkpoint_bytes(&net).unwrap();

        let mut bad = good.clone();
        bad[..4].copy_from_slice(b"XXXX");
        assert!(matches!(parse_checkpoint(&bad), Err(Error::BadMagic(m)) if &m == b"XXXX"));

        let short = &good[..good.len() - 10];
        assert!(matches!(
            parse_checkpoint(short),
            Err(Error::Truncated {
                section: "parameters",
                ..
            })
        ));
        assert!(matches!(parse_checkpoint(&good[..6]), Err(Error::Truncated { .. })));

        let mut long = good.clone();
        long.push(0);
        assert!(matches!(parse_checkpoint(&long), Err(Error::LengthMismatch(_))));

        let needle = b"\"version\":1";
        let at = good.windows(needle.len()).position(|w| w == needle).unwrap();
        let mut v2 = good.clone();
        v2[at + needle.len() - 1] = b'2';
        assert!(matches!(
            parse_checkpoint(&v2),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));
    }
}
