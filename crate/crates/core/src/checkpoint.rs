//! Binary checkpoint archive.
//!
//! ```text
//! "GLNC" | u32 version | u32 entry count
//! per entry: u16 name length | name | u8 rank | u32 extents[rank] | f32 payload
//! u32 CRC32 of all entry bytes
//! ```
//! All integers and floats are little-endian. The model configuration and the
//! training-iteration counter travel as two reserved entries so that every
//! entry is a plain float tensor.

use std::path::Path;

use crate::attention::AttentionConfig;
use crate::error::{Error, Result};
use crate::model::{GlNet, ModelConfig};
use crate::nn::NamedParam;
use crate::tensor::Scalar;

pub const MAGIC: &[u8; 4] = b"GLNC";
pub const VERSION: u32 = 1;
const CONFIG_ENTRY: &str = "meta.model_config";
const ITERATION_ENTRY: &str = "meta.iteration";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub iteration: u64,
    pub params: Vec<NamedParam>,
}

fn encode_config(c: &ModelConfig) -> Vec<f32> {
    let flag = |b: bool| if b { 1.0 } else { 0.0 };
    vec![
        c.group_size as f32,
        c.side as f32,
        c.channels as f32,
        c.stride as f32,
        flag(c.disable_gcm),
        flag(c.disable_lcm),
        flag(c.gcm_use_2d),
        flag(c.single_image_baseline),
        flag(c.shared_projection),
        c.attention.reduction as f32,
        c.attention.spatial_kernel as f32,
    ]
}

fn decode_config(v: &[f32]) -> Result<ModelConfig> {
    let int = |x: f32| -> Result<usize> {
        if x >= 0.0 && x.fract() == 0.0 && x < 16_777_216.0 {
            Ok(x as usize)
        } else {
            Err(Error::Checkpoint(format!("bad configuration value {x}")))
        }
    };
    let flag = |x: f32| -> Result<bool> {
        match x {
            0.0 => Ok(false),
            1.0 => Ok(true),
            _ => Err(Error::Checkpoint(format!("bad configuration flag {x}"))),
        }
    };
    if v.len() != 11 {
        return Err(Error::Checkpoint(format!("configuration entry has {} values, expected 11", v.len())));
    }
    let config = ModelConfig {
        group_size: int(v[0])?,
        side: int(v[1])?,
        channels: int(v[2])?,
        stride: int(v[3])?,
        disable_gcm: flag(v[4])?,
        disable_lcm: flag(v[5])?,
        gcm_use_2d: flag(v[6])?,
        single_image_baseline: flag(v[7])?,
        shared_projection: flag(v[8])?,
        attention: AttentionConfig { reduction: int(v[9])?, spatial_kernel: int(v[10])? },
    };
    config.validate().map_err(|e| Error::Checkpoint(format!("stored configuration is invalid: {e}")))?;
    Ok(config)
}

fn encode_iteration(it: u64) -> Vec<f32> {
    (0..4).map(|i| ((it >> (16 * i)) & 0xffff) as f32).collect()
}

fn decode_iteration(v: &[f32]) -> Result<u64> {
    if v.len() != 4 || v.iter().any(|x| x.fract() != 0.0 || !(0.0..65536.0).contains(x)) {
        return Err(Error::Checkpoint("malformed iteration entry".into()));
    }
    Ok(v.iter().enumerate().map(|(i, &x)| (x as u64) << (16 * i)).sum())
}

fn write_entry(out: &mut Vec<u8>, name: &str, shape: &[usize], data: &[f32]) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(shape.len() as u8);
    for &e in shape {
        let e = u32::try_from(e).map_err(|_| Error::Checkpoint(format!("extent too large in {name}")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn from_model<T: Scalar>(model: &GlNet<T>, iteration: u64) -> Self {
        Self { config: model.config.clone(), iteration, params: model.named_params() }
    }

    pub fn to_model<T: Scalar>(&self) -> Result<GlNet<T>> {
        GlNet::from_named(&self.config, &self.params)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&((self.params.len() + 2) as u32).to_le_bytes());
        let start = out.len();
        let cfg = encode_config(&self.config);
        write_entry(&mut out, CONFIG_ENTRY, &[cfg.len()], &cfg)?;
        write_entry(&mut out, ITERATION_ENTRY, &[4], &encode_iteration(self.iteration))?;
        for p in &self.params {
            if p.name.starts_with("meta.") {
                return Err(Error::Checkpoint(format!("reserved parameter name {}", p.name)));
            }
            write_entry(&mut out, &p.name, &p.shape, &p.data)?;
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| Error::Checkpoint("not a checkpoint (too short)".into()))? != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let count = r.u32()? as usize;
        let start = r.pos;
        let mut entries = Vec::new();
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let n = n.ok_or_else(|| Error::Checkpoint(format!("entry {name} is too large")))?;
            let payload = r.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("entry too large".into()))?)?;
            let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            entries.push(NamedParam { name, shape, data });
        }
        let end = r.pos;
        let stored = r.u32()?;
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes after checksum".into()));
        }
        if crc32fast::hash(&bytes[start..end]) != stored {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut config = None;
        let mut iteration = None;
        let mut params = Vec::new();
        for e in entries {
            match e.name.as_str() {
                CONFIG_ENTRY => config = Some(decode_config(&e.data)?),
                ITERATION_ENTRY => iteration = Some(decode_iteration(&e.data)?),
                _ => params.push(e),
            }
        }
        Ok(Self {
            config: config.ok_or_else(|| Error::Checkpoint("missing configuration entry".into()))?,
            iteration: iteration.ok_or_else(|| Error::Checkpoint("missing iteration entry".into()))?,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let cfg = ModelConfig { group_size: 2, side: 8, channels: 8, stride: 2, ..Default::default() };
        Checkpoint::from_model(&GlNet::<f32>::new(&cfg, 5).unwrap(), 70_000_000_123)
    }

    #[test]
    fn byte_round_trip_is_exact() {
        let ck = small();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        let model: GlNet<f32> = back.to_model().unwrap();
        assert_eq!(model.named_params(), ck.params);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = small().to_bytes().unwrap();
        let mut m = bytes.clone();
        m[0] = b'X';
        assert!(Checkpoint::from_bytes(&m).is_err());
        let mut v = bytes.clone();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::Checkpoint(s)) if s.contains("version")));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 9]).is_err());
        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x40;
        assert!(Checkpoint::from_bytes(&flipped).is_err());
        let mut longer = bytes;
        longer.push(0);
        assert!(Checkpoint::from_bytes(&longer).is_err());
    }

    #[test]
    fn iteration_halves() {
        for it in [0u64, 1, 65535, 65536, u64::MAX] {
            assert_eq!(decode_iteration(&encode_iteration(it)).unwrap(), it);
        }
    }
}
