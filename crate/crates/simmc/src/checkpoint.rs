//! Binary checkpoint format.
//!
//! Layout: magic `SIMMC1`, then little-endian u32 `H`, `K`, bias flag, then
//! `w1`, `w2`, `wc` as little-endian f32 row-major (biases `b1`, `b2`, `bc`
//! follow when the flag is 1), then a line-delimited `key=value` text trailer
//! recording the run hyperparameters (f, x, q, tau, lambda, seed).
//!
//! Parameters live in f64 in memory and are quantized to f32 on disk, so
//! save-then-load is bitwise exact whenever the values sit on the f32 grid
//! (freshly initialized models do; see `ModelParams::init`) and saving a
//! just-loaded model always reproduces the file byte-for-byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::encoder::{BiasParams, ModelParams};
use crate::error::{Error, Result};
use crate::mat::Mat;

const MAGIC: &[u8; 6] = b"SIMMC1";

/// Hyperparameters recorded in the checkpoint trailer.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub seq_len: usize,
    pub masks_x: usize,
    pub samplings_q: usize,
    pub tau: f64,
    pub lambda: f64,
    pub seed: u64,
}

fn push_f32s(buf: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes parameters and run metadata to `path`.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    params: &ModelParams,
    meta: &CheckpointMeta,
) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(params.hidden_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(params.input_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&(params.has_bias() as u32).to_le_bytes());
    push_f32s(&mut buf, params.w1.data());
    push_f32s(&mut buf, params.w2.data());
    push_f32s(&mut buf, params.wc.data());
    if let Some(b) = &params.bias {
        push_f32s(&mut buf, &b.b1);
        push_f32s(&mut buf, &b.b2);
        push_f32s(&mut buf, &b.bc);
    }
    let trailer = format!(
        "f={}\nx={}\nq={}\ntau={}\nlambda={}\nseed={}\n",
        meta.seq_len, meta.masks_x, meta.samplings_q, meta.tau, meta.lambda, meta.seed
    );
    buf.extend_from_slice(trailer.as_bytes());
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

fn take_f32s(bytes: &[u8], offset: &mut usize, count: usize, what: &str) -> Result<Vec<f64>> {
    let need = count * 4;
    if bytes.len() < *offset + need {
        return Err(Error::Checkpoint(format!(
            "file truncated while reading {what} ({} bytes left, {need} needed)",
            bytes.len() - *offset
        )));
    }
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let at = *offset + i * 4;
        let raw: [u8; 4] = bytes[at..at + 4].try_into().expect("4-byte slice");
        out.push(f32::from_le_bytes(raw) as f64);
    }
    *offset += need;
    Ok(out)
}

/// Loads a checkpoint, validating magic bytes, sizes, and the trailer.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelParams, CheckpointMeta)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.display())))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < MAGIC.len() + 12 {
        return Err(Error::Checkpoint("file too short for header".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("magic bytes mismatch".into()));
    }
    let mut offset = MAGIC.len();
    let read_u32 = |offset: &mut usize| -> u32 {
        let raw: [u8; 4] = bytes[*offset..*offset + 4].try_into().expect("4-byte slice");
        *offset += 4;
        u32::from_le_bytes(raw)
    };
    let h = read_u32(&mut offset) as usize;
    let k = read_u32(&mut offset) as usize;
    let bias_flag = read_u32(&mut offset);
    if h == 0 || k == 0 {
        return Err(Error::Checkpoint(format!("invalid dimensions H={h}, K={k}")));
    }
    if bias_flag > 1 {
        return Err(Error::Checkpoint(format!("invalid bias flag {bias_flag}")));
    }

    let w1 = Mat::from_vec(h, k, take_f32s(&bytes, &mut offset, h * k, "w1")?);
    let w2 = Mat::from_vec(h, h, take_f32s(&bytes, &mut offset, h * h, "w2")?);
    let wc = Mat::from_vec(h, h, take_f32s(&bytes, &mut offset, h * h, "wc")?);
    let bias = if bias_flag == 1 {
        Some(BiasParams {
            b1: take_f32s(&bytes, &mut offset, h, "b1")?,
            b2: take_f32s(&bytes, &mut offset, h, "b2")?,
            bc: take_f32s(&bytes, &mut offset, h, "bc")?,
        })
    } else {
        None
    };
    let params = ModelParams { w1, w2, wc, bias };

    let trailer = std::str::from_utf8(&bytes[offset..])
        .map_err(|_| Error::Checkpoint("trailer is not valid UTF-8".into()))?;
    let mut meta = CheckpointMeta {
        seq_len: 0,
        masks_x: 0,
        samplings_q: 0,
        tau: 0.0,
        lambda: 0.0,
        seed: 0,
    };
    let mut seen = [false; 6];
    for line in trailer.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("malformed trailer line '{line}'")))?;
        let bad = |what: &str| Error::Checkpoint(format!("invalid trailer {what} '{value}'"));
        match key {
            "f" => {
                meta.seq_len = value.parse().map_err(|_| bad("f"))?;
                seen[0] = true;
            }
            "x" => {
                meta.masks_x = value.parse().map_err(|_| bad("x"))?;
                seen[1] = true;
            }
            "q" => {
                meta.samplings_q = value.parse().map_err(|_| bad("q"))?;
                seen[2] = true;
            }
            "tau" => {
                meta.tau = value.parse().map_err(|_| bad("tau"))?;
                seen[3] = true;
            }
            "lambda" => {
                meta.lambda = value.parse().map_err(|_| bad("lambda"))?;
                seen[4] = true;
            }
            "seed" => {
                meta.seed = value.parse().map_err(|_| bad("seed"))?;
                seen[5] = true;
            }
            _ => {} // tolerate unknown keys from newer writers
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::Checkpoint(
            "trailer is missing one of f, x, q, tau, lambda, seed".into(),
        ));
    }
    Ok((params, meta))
}

/// Checks a loaded model against explicitly requested dimensions.
pub fn ensure_shape(params: &ModelParams, hidden: Option<usize>, input: Option<usize>) -> Result<()> {
    if let Some(h) = hidden {
        if params.hidden_dim() != h {
            return Err(Error::Checkpoint(format!(
                "checkpoint has H={}, requested H={h}",
                params.hidden_dim()
            )));
        }
    }
    if let Some(k) = input {
        if params.input_dim() != k {
            return Err(Error::Checkpoint(format!(
                "checkpoint has K={}, data has K={k}",
                params.input_dim()
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            seq_len: 6,
            masks_x: 2,
            samplings_q: 2,
            tau: 0.08,
            lambda: 0.5,
            seed: 42,
        }
    }

    #[test]
    fn fresh_model_round_trips_bitwise() {
        for bias in [false, true] {
            let mut rng = StdRng::seed_from_u64(5);
            let params = ModelParams::init(8, 5, bias, &mut rng).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("model.ckpt");
            save_checkpoint(&path, &params, &meta()).unwrap();
            let (back, back_meta) = load_checkpoint(&path).unwrap();
            assert_eq!(back, params);
            assert_eq!(back_meta, meta());
        }
    }

    #[test]
    fn save_is_idempotent_after_load() {
        // Arbitrary (non f32-grid) values: the file, not the f64 image, is
        // the fixed point.
        let mut params = ModelParams::zeros(3, 2, false);
        params.w1.data_mut()[0] = 0.1 + 1e-12;
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.ckpt");
        let second = dir.path().join("b.ckpt");
        save_checkpoint(&first, &params, &meta()).unwrap();
        let (loaded, m) = load_checkpoint(&first).unwrap();
        save_checkpoint(&second, &loaded, &m).unwrap();
        let a = std::fs::read(&first).unwrap();
        let b = std::fs::read(&second).unwrap();
        assert_eq!(a, b);
        let (again, _) = load_checkpoint(&second).unwrap();
        assert_eq!(again, loaded);
    }

    #[test]
    fn truncated_file_is_an_error_not_a_crash() {
        let mut rng = StdRng::seed_from_u64(6);
        let params = ModelParams::init(6, 4, false, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &params, &meta()).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3usize, 10, 20, bytes.len() / 2] {
            let path2 = dir.path().join(format!("cut{cut}.ckpt"));
            std::fs::write(&path2, &bytes[..cut]).unwrap();
            match load_checkpoint(&path2) {
                Err(Error::Checkpoint(_)) => {}
                other => panic!("expected checkpoint error, got {other:?}"),
            }
        }
    }

    #[test]
    fn magic_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.ckpt");
        std::fs::write(&path, b"NOTSIM00000000000000").unwrap();
        match load_checkpoint(&path) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("magic")),
            other => panic!("expected checkpoint error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let params = ModelParams::zeros(256, 75, false);
        assert!(ensure_shape(&params, Some(256), Some(75)).is_ok());
        let err = ensure_shape(&params, Some(128), None).unwrap_err();
        assert!(matches!(err, Error::Checkpoint(_)));
        assert!(ensure_shape(&params, None, Some(24)).is_err());
    }
}
