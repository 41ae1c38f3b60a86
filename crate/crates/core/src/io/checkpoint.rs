//! Binary checkpoint layout (all integers little-endian):
//!
//! ```text
//! "E2QR" | u32 version | u32 len, ModelConfig JSON | [u8; 32] vocab hash
//! | u8 bytes per float | u32 tensor count
//! | per tensor: u32 len, name | u32 ndim | u64 dims… | floats
//! | u8 has_state [| u64 step | u64 H | u64 t | per tensor: m floats, v floats (f64)]
//! ```

use std::path::Path;

use super::IoError;
use crate::curriculum::{AdamWState, TrainState};
use crate::model::{E2eqr, ModelConfig};
use crate::tensor::{ParamStore, Real, Tensor};

pub const MAGIC: &[u8; 4] = b"E2QR";
pub const VERSION: u32 = 1;

#[derive(Debug)]
pub struct Checkpoint<T: Real> {
    pub model: E2eqr<T>,
    pub vocab_hash: [u8; 32],
    /// Float width the file was written with (4 or 8).
    pub stored_bytes: usize,
    pub state: Option<TrainState>,
}

fn put_u32(out: &mut Vec<u8>, x: u32) {
    out.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub fn encode_checkpoint<T: Real>(model: &E2eqr<T>, vocab_hash: &[u8; 32], state: Option<&TrainState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let cfg = serde_json::to_vec(model.config()).expect("config serializes");
    put_u32(&mut out, cfg.len() as u32);
    out.extend_from_slice(&cfg);
    out.extend_from_slice(vocab_hash);
    out.push(T::BYTES as u8);
    put_u32(&mut out, model.params().len() as u32);
    for (_, p) in model.params().iter() {
        put_u32(&mut out, p.name().len() as u32);
        out.extend_from_slice(p.name().as_bytes());
        put_u32(&mut out, p.shape().len() as u32);
        for &d in p.shape() {
            put_u64(&mut out, d as u64);
        }
        for &x in p.value() {
            x.write_le(&mut out);
        }
    }
    match state {
        None => out.push(0),
        Some(s) => {
            out.push(1);
            put_u64(&mut out, s.step as u64);
            put_u64(&mut out, s.main_complexity as u64);
            put_u64(&mut out, s.optimizer.t);
            let n = if s.optimizer.m.is_empty() { 0 } else { model.params().len() };
            put_u32(&mut out, n as u32);
            for i in 0..n {
                for buf in [&s.optimizer.m[i], &s.optimizer.v[i]] {
                    for &x in buf.iter() {
                        x.write_le(&mut out);
                    }
                }
            }
        }
    }
    out
}

pub fn save_checkpoint<T: Real>(
    path: &Path,
    model: &E2eqr<T>,
    vocab_hash: &[u8; 32],
    state: Option<&TrainState>,
) -> Result<(), IoError> {
    std::fs::write(path, encode_checkpoint(model, vocab_hash, state)).map_err(|e| IoError::file(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.bytes.len() {
            return Err(IoError::Format("checkpoint is truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, IoError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, IoError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn floats(&mut self, n: usize, width: usize) -> Result<Vec<f64>, IoError> {
        let raw = self.take(n * width)?;
        Ok(raw
            .chunks_exact(width)
            .map(|c| if width == 4 { f32::read_le(c) as f64 } else { f64::read_le(c) })
            .collect())
    }
}

/// Loads a checkpoint into a model of precision `T`, converting if the file
/// was written at the other precision.
pub fn decode_checkpoint<T: Real>(bytes: &[u8]) -> Result<Checkpoint<T>, IoError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(IoError::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(IoError::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = r.u32()? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(len)?)?;
    let vocab_hash: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let width = r.u8()? as usize;
    if width != 4 && width != 8 {
        return Err(IoError::Format(format!("unsupported float width {width}")));
    }
    let count = r.u32()? as usize;
    let mut params = ParamStore::<T>::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|e| IoError::Format(e.to_string()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let data = r.floats(n, width)?.into_iter().map(T::of).collect();
        let t = Tensor::new(shape, data).map_err(|e| IoError::Format(e.to_string()))?;
        params.insert(name, t).map_err(|e| IoError::Format(e.to_string()))?;
    }
    let state = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()? as usize;
            let main_complexity = r.u64()? as usize;
            let t = r.u64()?;
            let n = r.u32()? as usize;
            let (mut m, mut v) = (Vec::with_capacity(n), Vec::with_capacity(n));
            for i in 0..n {
                let len = params.iter().nth(i).map(|(_, p)| p.len()).ok_or_else(|| {
                    IoError::Format("optimizer state has more buffers than parameters".into())
                })?;
                m.push(r.floats(len, 8)?);
                v.push(r.floats(len, 8)?);
            }
            Some(TrainState {
                step,
                main_complexity,
                optimizer: AdamWState { t, m, v },
            })
        }
        b => return Err(IoError::Format(format!("bad trainer-state flag {b}"))),
    };
    if r.pos != bytes.len() {
        return Err(IoError::Format("trailing bytes after checkpoint".into()));
    }
    let model = E2eqr::from_params(config, params).map_err(|e| IoError::Format(e.to_string()))?;
    Ok(Checkpoint {
        model,
        vocab_hash,
        stored_bytes: width,
        state,
    })
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>, IoError> {
    decode_checkpoint(&std::fs::read(path).map_err(|e| IoError::file(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{rewrite_forward, EncodedExample, FinalOutput, RewriteOptions, RewriteSession, StepInput};

    fn small() -> ModelConfig {
        ModelConfig {
            vocab_size: 20,
            d_model: 8,
            n_heads: 2,
            d_ff: 16,
            n_enc_layers: 1,
            n_dec_layers: 1,
            max_len: 12,
            ..ModelConfig::default()
        }
    }

    fn logits<T: Real>(m: &E2eqr<T>) -> Vec<T> {
        let ex = EncodedExample {
            id: "x".into(),
            hops: 2,
            steps: vec![
                StepInput { tokens: vec![3, 9, 4, 10], step_index: 1 },
                StepInput { tokens: vec![3, 9, 5, 11, 6, 12], step_index: 2 },
            ],
            gold: vec![13, 14],
        };
        let mut s = RewriteSession::new(m, false);
        let opts = RewriteOptions {
            teacher_forced_final: Some(&ex.gold),
            max_decode_len: Some(4),
            ..Default::default()
        };
        let FinalOutput::Logits(l) = rewrite_forward(&mut s, &ex, &opts).unwrap().final_output else {
            panic!()
        };
        s.graph().data(l).to_vec()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = E2eqr::<f32>::new(small(), 4).unwrap();
        let hash = [7u8; 32];
        let state = TrainState {
            step: 3,
            main_complexity: 2,
            optimizer: AdamWState {
                t: 3,
                m: m.params().iter().map(|(_, p)| vec![0.25; p.len()]).collect(),
                v: m.params().iter().map(|(_, p)| vec![0.5; p.len()]).collect(),
            },
        };
        let bytes = encode_checkpoint(&m, &hash, Some(&state));
        let c = decode_checkpoint::<f32>(&bytes).unwrap();
        assert_eq!(c.vocab_hash, hash);
        assert_eq!(c.stored_bytes, 4);
        assert_eq!(c.state.as_ref(), Some(&state));
        assert_eq!(logits(&m), logits(&c.model));
        assert_eq!(encode_checkpoint(&c.model, &hash, Some(&state)), bytes);

        let wide = decode_checkpoint::<f64>(&bytes).unwrap();
        assert_eq!(wide.model.params().iter().next().unwrap().1.value()[0], m.params().iter().next().unwrap().1.value()[0] as f64);
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_checkpoint::<f64>(b"NOPE").is_err());
        let m = E2eqr::<f64>::new(small(), 1).unwrap();
        let bytes = encode_checkpoint(&m, &[0; 32], None);
        assert!(decode_checkpoint::<f64>(&bytes[..bytes.len() - 3]).is_err());
    }
}
