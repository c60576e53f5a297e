//! Binary checkpoint: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header (config, seed, tensor names and lengths), then every tensor
//! as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Network, NetworkConfig};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"PWNETCK1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    buffer: bool,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    seed: u64,
    tensors: Vec<TensorEntry>,
}

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let mut tensors = Vec::new();
    for (store, buffer) in [(&net.params, false), (&net.buffers, true)] {
        for (name, v) in store.names.iter().zip(&store.values) {
            tensors.push(TensorEntry {
                name: name.clone(),
                buffer,
                len: v.len(),
            });
        }
    }
    let header = serde_json::to_vec(&Header {
        config: net.config.clone(),
        seed: net.seed,
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(16 + header.len() + 8 * (net.params.scalar_count() + net.buffers.scalar_count()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for store in [&net.params, &net.buffers] {
        for v in store.values.iter().flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let bad = |m: &str| Error::Invalid(format!("corrupt checkpoint: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let mut net = Network::new(header.config, header.seed)?;
    let mut off = 16 + hlen;
    for t in &header.tensors {
        let store = if t.buffer { &mut net.buffers } else { &mut net.params };
        let slot = store
            .get_mut(&t.name)
            .ok_or_else(|| bad(&format!("unknown tensor {}", t.name)))?;
        if slot.len() != t.len {
            return Err(bad(&format!("tensor {} has length {}", t.name, t.len)));
        }
        let raw = bytes.get(off..off + 8 * t.len).ok_or_else(|| bad("truncated data"))?;
        for (dst, chunk) in slot.iter_mut().zip(raw.chunks_exact(8)) {
            *dst = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
        off += 8 * t.len;
    }
    if off != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(net)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    crate::data::write_atomic_bytes(path, &encode_checkpoint(net))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segnet::ops::Tensor;

    #[test]
    fn round_trip_reproduces_outputs() {
        let cfg = NetworkConfig {
            input_size: (64, 64),
            base_filters: [2, 3, 3, 4, 4, 5],
            ..NetworkConfig::default()
        };
        let mut net = Network::new(cfg, 5).unwrap();
        net.buffers.values[0][0] = 0.123456789;
        let bytes = encode_checkpoint(&net);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.params, net.params);
        assert_eq!(back.buffers, net.buffers);
        let mut x = Tensor::zeros(1, 4, 64, 64);
        x.data.iter_mut().enumerate().for_each(|(i, v)| *v = (i as f64).cos());
        assert_eq!(net.forward(&x).unwrap(), back.forward(&x).unwrap());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }
}
