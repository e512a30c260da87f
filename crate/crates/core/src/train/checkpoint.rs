use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io::{read, write_atomic};
use crate::nn::Model;
use crate::scalar::Scalar;
use crate::tensor::{Shape, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"PANCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training bit-for-bit.
///
/// Layout: magic, `u32` version, length-prefixed config text, iteration,
/// Adam step, RNG state, a manifest of `(name, dtype, shape)` entries, the
/// little-endian payloads in manifest order, and a trailing `u64` checksum
/// (first 8 bytes of SHA-256) over the payload region.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    /// Echo of the training config text.
    pub config: String,
    pub iteration: u64,
    pub adam_step: u64,
    pub rng: RngState,
    pub params: Vec<(String, Tensor<T>)>,
    pub adam_m: Vec<Tensor<T>>,
    pub adam_v: Vec<Tensor<T>>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Checkpoint("string is not UTF-8".into()))
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn checksum(payload: &[u8]) -> u64 {
    u64::from_le_bytes(Sha256::digest(payload)[..8].try_into().unwrap())
}

impl<T: Scalar> Checkpoint<T> {
    /// Weights-only checkpoint: fresh Adam state, iteration 0.
    pub fn from_model(model: &Model<T>, config: String, rng: &ChaCha8Rng) -> Self {
        let params: Vec<_> = model
            .params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.clone()))
            .collect();
        let zeros: Vec<_> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Checkpoint {
            config,
            iteration: 0,
            adam_step: 0,
            rng: RngState::capture(rng),
            params,
            adam_m: zeros.clone(),
            adam_v: zeros,
        }
    }

    fn entries(&self) -> impl Iterator<Item = (String, &Tensor<T>)> {
        let named = self.params.iter().map(|(n, t)| (n.clone(), t));
        let m = self
            .params
            .iter()
            .zip(&self.adam_m)
            .map(|((n, _), t)| (format!("{MOMENT1}{n}"), t));
        let v = self
            .params
            .iter()
            .zip(&self.adam_v)
            .map(|((n, _), t)| (format!("{MOMENT2}{n}"), t));
        named.chain(m).chain(v)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        put_str(&mut out, &self.config);
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&self.adam_step.to_le_bytes());
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let entries: Vec<_> = self.entries().collect();
        out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
        for (name, t) in &entries {
            put_str(&mut out, name);
            put_str(&mut out, T::DTYPE);
            for d in t.shape().dims() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
        }
        let start = out.len();
        for (_, t) in &entries {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        let sum = checksum(&out[start..]);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(
                "not a checkpoint file (bad magic)".into(),
            ));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version}"
            )));
        }
        let config = r.str()?;
        let iteration = r.u64()?;
        let adam_step = r.u64()?;
        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());

        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.str()?;
            let dtype = r.str()?;
            if dtype != T::DTYPE {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored as {dtype}, expected {}",
                    T::DTYPE
                )));
            }
            let d = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|v| v as usize);
            manifest.push((name, Shape::new(d[0], d[1], d[2], d[3])));
        }
        let payload_len: usize = manifest.iter().map(|(_, s)| s.numel() * T::BYTES).sum();
        let payload = r.take(payload_len)?;
        let stored = r.u64()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        if checksum(payload) != stored {
            return Err(Error::Checkpoint("payload checksum mismatch".into()));
        }

        let mut tensors = Vec::with_capacity(manifest.len());
        let mut off = 0;
        for (name, shape) in manifest {
            let n = shape.numel();
            let data = (0..n)
                .map(|i| T::read_le(&payload[off + i * T::BYTES..]))
                .collect();
            off += n * T::BYTES;
            tensors.push((name, Tensor::from_vec(shape, data)?));
        }
        if tensors.len() % 3 != 0 {
            return Err(Error::Checkpoint(
                "entry count is not a multiple of 3".into(),
            ));
        }
        let n = tensors.len() / 3;
        let mut v_part = tensors.split_off(2 * n);
        let mut m_part = tensors.split_off(n);
        let params = tensors;
        let mut adam_m = Vec::with_capacity(n);
        let mut adam_v = Vec::with_capacity(n);
        for (i, (name, t)) in params.iter().enumerate() {
            let (mn, mt) = std::mem::replace(
                &mut m_part[i],
                (String::new(), Tensor::zeros(Shape::scalar())),
            );
            let (vn, vt) = std::mem::replace(
                &mut v_part[i],
                (String::new(), Tensor::zeros(Shape::scalar())),
            );
            if mn != format!("{MOMENT1}{name}") || vn != format!("{MOMENT2}{name}") {
                return Err(Error::Checkpoint(format!(
                    "moment entries out of order at {name}"
                )));
            }
            if mt.shape() != t.shape() || vt.shape() != t.shape() {
                return Err(Error::Checkpoint(format!(
                    "moment shapes differ from {name}"
                )));
            }
            adam_m.push(mt);
            adam_v.push(vt);
        }
        Ok(Checkpoint {
            config,
            iteration,
            adam_step,
            rng: RngState {
                seed,
                stream,
                word_pos,
            },
            params,
            adam_m,
            adam_v,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read(path)?).map_err(|e| match e {
            Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Copies the named weights into `model`, failing with a full diff if the
    /// architectures disagree.
    pub fn load_weights(&self, model: &mut Model<T>) -> Result<()> {
        model.params.load_named(self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ModelConfig;
    use rand::RngCore;

    fn sample() -> Checkpoint<f32> {
        let model = Model::<f32>::new(ModelConfig::tiny(2, 8, 6, 1), 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.next_u64();
        let mut ck = Checkpoint::from_model(&model, "scale = 2\n".into(), &rng);
        ck.iteration = 17;
        ck.adam_step = 17;
        ck.adam_m[0].data_mut()[0] = 0.25;
        ck.adam_v[1].data_mut()[2] = 1e-9;
        ck
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.next_u32();
        let state = RngState::capture(&rng);
        let a: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        let mut back = state.restore();
        let b: Vec<u64> = (0..4).map(|_| back.next_u64()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = sample().to_bytes();
        let mut flipped = bytes.clone();
        let n = flipped.len();
        flipped[n - 20] ^= 1;
        assert!(
            matches!(Checkpoint::<f32>::from_bytes(&flipped), Err(Error::Checkpoint(m)) if m.contains("checksum"))
        );
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..n - 3]).is_err());
        assert!(Checkpoint::<f32>::from_bytes(b"not a checkpoint").is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
    }

    #[test]
    fn architecture_mismatch_lists_differences() {
        let ck = sample();
        let mut other = Model::<f32>::zeros(ModelConfig::tiny(4, 8, 6, 1)).unwrap();
        let err = ck.load_weights(&mut other).unwrap_err().to_string();
        assert!(err.contains("up.1"), "{err}");
        let mut same = Model::<f32>::zeros(ModelConfig::tiny(2, 8, 6, 1)).unwrap();
        ck.load_weights(&mut same).unwrap();
        assert_eq!(same.params.iter().next().unwrap().tensor, ck.params[0].1);
    }
}
