//! VGGW1 weight container.
//!
//! ```text
//! "VGGW" | u32 version = 1 | u32 entry count
//! entry: u32 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 values
//! 3 × f32 channel means | u32 CRC32
//! ```
//!
//! All integers and floats are little-endian. Each convolution contributes
//! two entries, `convB_N.weight` with dims `[3, 3, Cin, Cout]` followed by
//! `convB_N.bias` with dims `[Cout]`, so a full network holds 32 entries. The
//! checksum covers every byte between the version field and the checksum.

use super::{conv_names, layer_err, ConvLayer, Result, VggError, VggNetwork};
use crate::ndtensor::DenseTensor;
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"VGGW";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| VggError::Truncated(what.to_string()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| VggError::Truncated(what.to_string()))?, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    }
}

struct Entry {
    name: String,
    dims: Vec<usize>,
    values: Vec<f64>,
}

fn read_entry(r: &mut Reader, index: usize) -> Result<Entry> {
    let label = format!("entry #{index}");
    let len = r.u32(&format!("{label} name length"))? as usize;
    let name = std::str::from_utf8(r.take(len, &format!("{label} name"))?)
        .map_err(|_| layer_err(&label, "name is not UTF-8"))?
        .to_string();
    let rank = r.u32(&format!("{name} rank"))? as usize;
    let mut dims = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        dims.push(r.u32(&format!("{name} dims"))? as usize);
    }
    let count = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
    let count = count.ok_or_else(|| layer_err(&name, "element count overflows"))?;
    let values = r.f32s(count, &format!("{name} data"))?;
    Ok(Entry { name, dims, values })
}

fn write_entry(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f64]) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

impl VggNetwork {
    /// Serializes to VGGW1. Coefficients are narrowed to `f32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(2 * self.convs().len() as u32).to_le_bytes());
        for layer in self.convs() {
            write_entry(&mut out, &format!("{}.weight", layer.name), layer.kernels.shape(), layer.kernels.data());
            write_entry(&mut out, &format!("{}.bias", layer.name), &[layer.bias.len()], &layer.bias);
        }
        for m in self.means() {
            out.extend_from_slice(&(m as f32).to_le_bytes());
        }
        let crc = crc32fast::hash(&out[8..]);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4, "magic").map_err(|_| VggError::Magic)? != MAGIC {
            return Err(VggError::Magic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(VggError::Version(version));
        }
        let count = r.u32("entry count")? as usize;
        let expected = 2 * conv_names().len();
        if count != expected {
            return Err(VggError::LayerCount { expected, actual: count });
        }
        let mut entries = Vec::with_capacity(count);
        for i in 0..count {
            entries.push(read_entry(&mut r, i)?);
        }
        let means = r.f32s(3, "channel means")?;
        let payload_end = r.pos;
        let stored = r.u32("checksum")?;
        let computed = crc32fast::hash(&bytes[8..payload_end]);
        if stored != computed {
            return Err(VggError::Checksum { stored, computed });
        }
        if r.pos != bytes.len() {
            return Err(VggError::Trailing {
                trailing: bytes.len() - r.pos,
            });
        }

        let mut convs = Vec::with_capacity(count / 2);
        for (pair, name) in entries.chunks_exact(2).zip(conv_names()) {
            let (w, b) = (&pair[0], &pair[1]);
            if w.name != format!("{name}.weight") {
                return Err(layer_err(&w.name, format!("expected {name}.weight at this position")));
            }
            if b.name != format!("{name}.bias") {
                return Err(layer_err(&b.name, format!("expected {name}.bias at this position")));
            }
            if w.dims.len() != 4 {
                return Err(layer_err(&w.name, format!("rank {}, expected 4", w.dims.len())));
            }
            if b.dims.len() != 1 {
                return Err(layer_err(&b.name, format!("rank {}, expected 1", b.dims.len())));
            }
            let kernels =
                DenseTensor::new(w.dims.clone(), w.values.clone()).map_err(|e| layer_err(&w.name, e.to_string()))?;
            convs.push(ConvLayer {
                name,
                kernels,
                bias: b.values.clone(),
            });
        }
        VggNetwork::new(convs, [means[0], means[1], means[2]])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| VggError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

pub fn load_weights(path: &Path) -> Result<VggNetwork> {
    let bytes = std::fs::read(path).map_err(|source| VggError::Io {
        path: path.display().to_string(),
        source,
    })?;
    VggNetwork::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Hand-rolled encoder following the layout comment, independent of
    /// `to_bytes`.
    fn encode(net: &VggNetwork) -> Vec<u8> {
        let mut payload = Vec::new();
        let push_u32 = |p: &mut Vec<u8>, v: u32| p.extend(v.to_le_bytes());
        push_u32(&mut payload, 32);
        for layer in net.convs() {
            for (suffix, dims, vals) in [
                ("weight", layer.kernels.shape().to_vec(), layer.kernels.data().to_vec()),
                ("bias", vec![layer.bias.len()], layer.bias.clone()),
            ] {
                let name = format!("{}.{suffix}", layer.name);
                push_u32(&mut payload, name.len() as u32);
                payload.extend(name.bytes());
                push_u32(&mut payload, dims.len() as u32);
                for d in dims {
                    push_u32(&mut payload, d as u32);
                }
                for v in vals {
                    payload.extend((v as f32).to_le_bytes());
                }
            }
        }
        for m in net.means() {
            payload.extend((m as f32).to_le_bytes());
        }
        let mut hasher = crc32fast::Hasher::new();
        hasher.update(&payload);
        let crc = hasher.finalize();
        let mut out = b"VGGW".to_vec();
        out.extend(1u32.to_le_bytes());
        out.extend(payload);
        out.extend(crc.to_le_bytes());
        out
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let net = VggNetwork::tiny(7);
        let bytes = net.to_bytes();
        assert_eq!(bytes, encode(&net));
        let back = VggNetwork::from_bytes(&bytes).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.convs().len(), 16);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tiny.vggw");
        let net = VggNetwork::tiny(2);
        net.save(&path).unwrap();
        assert_eq!(load_weights(&path).unwrap(), net);
        assert!(matches!(load_weights(&dir.path().join("missing")), Err(VggError::Io { .. })));
    }

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(VggNetwork::tiny(9).to_bytes(), VggNetwork::tiny(9).to_bytes());
        assert_ne!(VggNetwork::tiny(9).to_bytes(), VggNetwork::tiny(10).to_bytes());
    }

    #[test]
    fn truncation_names_the_layer() {
        let bytes = VggNetwork::tiny(1).to_bytes();
        // cut inside the conv3_2 kernel data
        let net = VggNetwork::tiny(1);
        let mut offset = 12;
        for layer in &net.convs()[..5] {
            offset += 4 + layer.name.len() + 7 + 4 + 16 + 4 * layer.kernels.len();
            offset += 4 + layer.name.len() + 5 + 4 + 4 + 4 * layer.bias.len();
        }
        let cut = offset + 100;
        let err = VggNetwork::from_bytes(&bytes[..cut]).unwrap_err();
        assert!(matches!(&err, VggError::Truncated(what) if what.contains("conv3_2.weight")), "{err}");
    }

    #[test]
    fn header_and_checksum_errors() {
        let mut bytes = VggNetwork::tiny(1).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(VggNetwork::from_bytes(&bad), Err(VggError::Magic)));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(VggNetwork::from_bytes(&bad), Err(VggError::Version(2))));
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(VggNetwork::from_bytes(&bytes), Err(VggError::Checksum { .. })));
    }

    #[test]
    fn shape_mismatch_names_the_layer() {
        let net = VggNetwork::tiny(1);
        let mut convs = net.convs().to_vec();
        // widen conv2_1 only: the block then disagrees with itself
        convs[2] = ConvLayer {
            name: "conv2_1".into(),
            kernels: DenseTensor::zeros(&[3, 3, 8, 17]),
            bias: vec![0.0; 17],
        };
        let broken = VggNetwork {
            convs,
            means: net.means(),
            nodes: Vec::new(),
        };
        let err = VggNetwork::from_bytes(&broken.to_bytes()).unwrap_err().to_string();
        assert!(err.contains("conv2_2"), "{err}");
    }
}
