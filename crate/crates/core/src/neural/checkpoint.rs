//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "DOCKQNET"
//! version  u32      1
//! layers   u32      4
//! per layer, in order obs_hidden, obs_out, action, output:
//!   inputs  u32
//!   outputs u32
//!   weights f64 x (outputs * inputs), row-major
//!   bias    f64 x outputs
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Dense, QNetwork};
use crate::error::{DockError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DOCKQNET";
const VERSION: u32 = 1;
const MAX_LAYER_ELEMS: usize = 1 << 24;

pub fn write_checkpoint<W: Write>(net: &QNetwork, mut w: W) -> std::io::Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for layer in net.layers() {
        w.write_all(&(layer.inputs as u32).to_le_bytes())?;
        w.write_all(&(layer.outputs as u32).to_le_bytes())?;
        for v in layer.weights.iter().chain(&layer.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Reads a checkpoint; errors are reported as strings for the caller to
/// attach a path to.
pub fn read_checkpoint<R: Read>(mut r: R) -> std::result::Result<QNetwork, String> {
    let io = |e: std::io::Error| format!("truncated or unreadable checkpoint: {e}");
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err("not a Q-network checkpoint (bad magic)".into());
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = read_u32(&mut r).map_err(io)? as usize;
    if count != 4 {
        return Err(format!("expected 4 layers, found {count}"));
    }
    let mut layers = Vec::with_capacity(4);
    for _ in 0..count {
        let inputs = read_u32(&mut r).map_err(io)? as usize;
        let outputs = read_u32(&mut r).map_err(io)? as usize;
        if inputs.saturating_mul(outputs) > MAX_LAYER_ELEMS {
            return Err(format!("implausible layer size {inputs}x{outputs}"));
        }
        let weights = read_f64s(&mut r, inputs * outputs).map_err(io)?;
        let bias = read_f64s(&mut r, outputs).map_err(io)?;
        layers.push(Dense {
            inputs,
            outputs,
            weights,
            bias,
        });
    }
    let mut it = layers.into_iter();
    let net = QNetwork {
        obs_hidden: it.next().unwrap(),
        obs_out: it.next().unwrap(),
        action: it.next().unwrap(),
        output: it.next().unwrap(),
    };
    net.check_shape().map_err(|e| e.to_string())?;
    Ok(net)
}

pub fn save_checkpoint(net: &QNetwork, path: &Path) -> Result<()> {
    let f = std::fs::File::create(path).map_err(|e| DockError::io(path, e))?;
    write_checkpoint(net, std::io::BufWriter::new(f)).map_err(|e| DockError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<QNetwork> {
    let f = std::fs::File::open(path).map_err(|e| DockError::io(path, e))?;
    read_checkpoint(std::io::BufReader::new(f)).map_err(|message| DockError::Parse {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>()) {
            let net = QNetwork::init(&mut ChaCha8Rng::seed_from_u64(seed));
            let mut buf = Vec::new();
            write_checkpoint(&net, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            for (a, b) in net.tensors().iter().zip(back.tensors()) {
                prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn layout_is_documented_order() {
        let mut net = QNetwork::zeros();
        net.obs_hidden.weights[1] = 2.5;
        let mut buf = Vec::new();
        write_checkpoint(&net, &mut buf).unwrap();
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 12);
        assert_eq!(u32::from_le_bytes(buf[20..24].try_into().unwrap()), 16);
        assert_eq!(f64::from_le_bytes(buf[32..40].try_into().unwrap()), 2.5);
        let total = 16 + 4 * 8 + 8 * net.num_params();
        assert_eq!(buf.len(), total);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&QNetwork::zeros(), &mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.bin");
        let net = QNetwork::init(&mut ChaCha8Rng::seed_from_u64(4));
        save_checkpoint(&net, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), net);
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(DockError::Io { .. })
        ));
    }
}
