//! Little-endian checkpoint codec.
//!
//! Layout:
//!
//! ```text
//! "WPNN"                      4 bytes
//! version                     u32
//! n_down, n_up, n_res,
//! base_channels, input_side,
//! main, down_side, up_side,
//! res_side kernels            9 x u64
//! input_offset, input_gain    2 x f64
//! parameter count             u32
//! per parameter:  rank u32, dims rank x u64, values f64...
//! ```
//!
//! Parameters appear in the network's declaration order.

#[allow(unused_imports)]
use num_traits::Float as _;

use alloc::format;
use alloc::vec::Vec;

use super::network::{Network, NetworkConfig};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"WPNN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &Network) -> Vec<u8> {
    let c = net.config();
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        c.n_down_blocks,
        c.n_up_blocks,
        c.n_res_blocks,
        c.base_channels,
        c.input_side,
        c.main_kernel,
        c.down_side_kernel,
        c.up_side_kernel,
        c.res_side_kernel,
    ] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.input_offset.to_le_bytes());
    out.extend_from_slice(&c.input_gain.to_le_bytes());
    let params = net.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        out.extend_from_slice(&(p.shape().len() as u32).to_le_bytes());
        for &d in p.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos = end;
        Ok(slice.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32> {
        self.take().map(u32::from_le_bytes)
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take()?);
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("value {v} does not fit usize")))
    }

    fn f64(&mut self) -> Result<f64> {
        self.take().map(f64::from_le_bytes)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take::<4>()? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = NetworkConfig {
        n_down_blocks: r.usize()?,
        n_up_blocks: r.usize()?,
        n_res_blocks: r.usize()?,
        base_channels: r.usize()?,
        input_side: r.usize()?,
        main_kernel: r.usize()?,
        down_side_kernel: r.usize()?,
        up_side_kernel: r.usize()?,
        res_side_kernel: r.usize()?,
        input_offset: r.f64()?,
        input_gain: r.f64()?,
    };
    let mut net = Network::uninitialized(&config)
        .map_err(|e| Error::Checkpoint(format!("stored config: {e}")))?;
    let count = r.u32()? as usize;
    let mut params = net.params_mut();
    if count != params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} parameter buffers stored, layout has {}",
            params.len()
        )));
    }
    for (i, p) in params.iter_mut().enumerate() {
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.usize()?);
        }
        if shape != p.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {i}: stored shape {shape:?}, expected {:?}",
                p.shape()
            )));
        }
        for v in p.data_mut() {
            *v = r.f64()?;
            if !v.is_finite() {
                return Err(Error::Checkpoint(format!(
                    "parameter {i}: non-finite value"
                )));
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn cfg() -> NetworkConfig {
        NetworkConfig {
            base_channels: 3,
            input_side: 8,
            input_gain: 2.5,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_preserves_outputs() {
        let mut net = Network::build(&cfg(), 9).unwrap();
        let bytes = encode_checkpoint(&net);
        assert_eq!(&bytes[..4], b"WPNN");
        let mut back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), net.config());
        let x = Tensor::from_vec(
            &[1, 1, 8, 8],
            (0..64).map(|v| (v as f64 * 0.3).cos()).collect(),
        )
        .unwrap();
        assert_eq!(net.infer(&x).unwrap(), back.infer(&x).unwrap());
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let net = Network::build(&cfg(), 9).unwrap();
        let bytes = encode_checkpoint(&net);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_checkpoint(&bad).is_err());
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
        let mut ver = bytes;
        ver[4] = 9;
        assert!(matches!(decode_checkpoint(&ver), Err(Error::Checkpoint(_))));
    }
}
