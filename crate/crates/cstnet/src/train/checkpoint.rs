//! Checkpoint container: magic "CSTN", format version, a config echo, then
//! per-tensor records (name length u16, name bytes, rank u8, extents u32
//! each, raw little-endian 32-bit reals). All integers little-endian.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::rng::RNG_ALGORITHM;
use crate::tensor::{identity3, Tensor};

use super::config::TrainConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CSTN";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Guard against allocating absurd buffers from corrupt headers.
const MAX_TENSOR_ELEMS: usize = 1 << 28;

pub fn save_checkpoint(
    model: &Model<f32>,
    cfg: &TrainConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());

    let config_text = format!("# rng={RNG_ALGORITHM}\n{}", cfg.to_text());
    buf.extend_from_slice(&(config_text.len() as u32).to_le_bytes());
    buf.extend_from_slice(config_text.as_bytes());

    let tensors = model.state_tensors();
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            buf.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "checkpoint truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Loads a checkpoint, rebuilding the model skeleton from the echoed config
/// and filling every state tensor. Evaluation output of the loaded model is
/// bitwise-identical to the saved one.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Model<f32>, TrainConfig)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader { bytes: &bytes, pos: 0 };

    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad magic, not a checkpoint",
            path.display()
        )));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version}",
            path.display()
        )));
    }

    let config_len = r.u32()? as usize;
    let config_text = std::str::from_utf8(r.take(config_len)?)
        .map_err(|_| Error::Format(format!("{}: config echo is not UTF-8", path.display())))?;
    let mut cfg = TrainConfig::default();
    cfg.apply_text(config_text)?;

    // A frozen-front skeleton starts from a placeholder that the stored
    // cst.W record then overwrites.
    let fixed = (cfg.variant == Variant::CstFixed).then(identity3::<f32>);
    let mut model = Model::build(cfg.variant, cfg.seed, cfg.cst_bias, fixed)?;

    let expected: Vec<&'static str> = model.state_tensors().iter().map(|(n, _)| *n).collect();
    let count = r.u32()? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "{}: {count} tensors stored, variant {} expects {}",
            path.display(),
            cfg.variant,
            expected.len()
        )));
    }
    let mut seen: Vec<String> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::Format(format!("{}: tensor name is not UTF-8", path.display())))?
            .to_string();
        let rank = r.u8()? as usize;
        if rank == 0 || rank > 4 {
            return Err(Error::Format(format!(
                "{}: tensor '{name}' has rank {rank}",
                path.display()
            )));
        }
        let mut shape = Vec::with_capacity(rank);
        let mut elems: usize = 1;
        for _ in 0..rank {
            let e = r.u32()? as usize;
            elems = elems.saturating_mul(e);
            shape.push(e);
        }
        if elems == 0 || elems > MAX_TENSOR_ELEMS {
            return Err(Error::Format(format!(
                "{}: tensor '{name}' has implausible shape {shape:?}",
                path.display()
            )));
        }
        let raw = r.take(elems * 4)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        model.set_state_tensor(&name, Tensor::from_vec(&shape, data)?)?;
        seen.push(name);
    }
    for want in expected {
        if !seen.iter().any(|s| s == want) {
            return Err(Error::Format(format!(
                "{}: missing tensor '{want}'",
                path.display()
            )));
        }
    }
    Ok((model, cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn trained_ish_model() -> (Model<f32>, TrainConfig) {
        let mut cfg = TrainConfig::default();
        cfg.set("variant", "cst-global").unwrap();
        cfg.set("seed", "11").unwrap();
        let mut model = Model::build(cfg.variant, cfg.seed, false, None).unwrap();
        // Perturb a few tensors so the round trip is not trivially identity.
        let mut rng = RngStream::new(99, "ckpt.noise");
        for p in model.params_mut() {
            let noise = Tensor::normal(p.value.shape(), 0.01, &mut rng).unwrap();
            p.value.add_assign(&noise).unwrap();
        }
        (model, cfg)
    }

    #[test]
    fn save_load_round_trip_is_bitwise() {
        let (model, cfg) = trained_ish_model();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, &cfg, f.path()).unwrap();
        let (loaded, cfg2) = load_checkpoint(f.path()).unwrap();
        assert_eq!(cfg2.variant, cfg.variant);
        assert_eq!(cfg2.seed, cfg.seed);
        for ((n1, t1), (n2, t2)) in model.state_tensors().iter().zip(loaded.state_tensors()) {
            assert_eq!(*n1, n2);
            assert_eq!(t1.data(), t2.data(), "tensor {n1} changed");
        }

        let mut rng = RngStream::new(5, "ckpt.eval");
        let x = Tensor::<f32>::normal(&[2, 3, 32, 32], 0.5, &mut rng).unwrap();
        let (l1, _) = model.forward(&x).unwrap();
        let (l2, _) = loaded.forward(&x).unwrap();
        assert_eq!(l1.data(), l2.data());
    }

    #[test]
    fn flipped_magic_byte_is_rejected() {
        let (model, cfg) = trained_ish_model();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, &cfg, f.path()).unwrap();
        let mut bytes = std::fs::read(f.path()).unwrap();
        bytes[0] ^= 0xff;
        std::fs::write(f.path(), &bytes).unwrap();
        assert!(matches!(load_checkpoint(f.path()), Err(Error::Format(_))));
    }

    #[test]
    fn truncation_is_rejected() {
        let (model, cfg) = trained_ish_model();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, &cfg, f.path()).unwrap();
        let bytes = std::fs::read(f.path()).unwrap();
        std::fs::write(f.path(), &bytes[..bytes.len() - 7]).unwrap();
        assert!(matches!(load_checkpoint(f.path()), Err(Error::Format(_))));
    }

    /// Walks the container with independent reader code (no library paths)
    /// and confirms the trained global matrix is stored as "cst.W" 3x3.
    #[test]
    fn global_matrix_is_stored_under_its_contract_name() {
        let (model, cfg) = trained_ish_model();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_checkpoint(&model, &cfg, f.path()).unwrap();
        let b = std::fs::read(f.path()).unwrap();

        assert_eq!(&b[..4], b"CSTN");
        let mut pos = 4;
        let version = u16::from_le_bytes([b[pos], b[pos + 1]]);
        pos += 2;
        assert_eq!(version, 1);
        let cfg_len =
            u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as usize;
        pos += 4 + cfg_len;
        let count = u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as usize;
        pos += 4;
        let mut found = false;
        for _ in 0..count {
            let name_len = u16::from_le_bytes([b[pos], b[pos + 1]]) as usize;
            pos += 2;
            let name = std::str::from_utf8(&b[pos..pos + name_len]).unwrap().to_string();
            pos += name_len;
            let rank = b[pos] as usize;
            pos += 1;
            let mut elems = 1usize;
            let mut extents = Vec::new();
            for _ in 0..rank {
                let e = u32::from_le_bytes([b[pos], b[pos + 1], b[pos + 2], b[pos + 3]]) as usize;
                extents.push(e);
                elems *= e;
                pos += 4;
            }
            if name == "cst.W" {
                assert_eq!(extents, vec![3, 3]);
                found = true;
            }
            pos += elems * 4;
        }
        assert_eq!(pos, b.len(), "reader consumed the whole file");
        assert!(found, "checkpoint must contain cst.W");
    }
}
