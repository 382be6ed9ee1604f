//! Binary checkpoint container.
//!
//! Layout: magic `TSLAB1`; `u32` byte length of a UTF-8 `key=value` config
//! block; `u32` block count; then per block a `u32` name length, the name
//! bytes, a `u64` element count and that many little-endian `f64`s.

use std::io::{Read, Write};
use std::path::Path;

use super::params::{ModelConfig, PredictorKind, TransducerParams};
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"TSLAB1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub config: Vec<(String, String)>,
    pub blocks: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn get(&self, key: &str) -> Result<&str> {
        self.config
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Format(format!("checkpoint config is missing {key:?}")))
    }

    pub fn get_usize(&self, key: &str) -> Result<usize> {
        self.get(key)?.parse().map_err(|_| Error::Format(format!("checkpoint key {key:?} is not an integer")))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_container(&mut f, self)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        read_container(&mut f)
    }
}

pub fn write_container<W: Write>(w: &mut W, c: &Container) -> Result<()> {
    w.write_all(MAGIC)?;
    let mut text = String::new();
    for (k, v) in &c.config {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::Format(format!("config entry {k:?} cannot be serialized")));
        }
        text.push_str(k);
        text.push('=');
        text.push_str(v);
        text.push('\n');
    }
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    w.write_all(&(c.blocks.len() as u32).to_le_bytes())?;
    for (name, values) in &c.blocks {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(values.len() as u64).to_le_bytes())?;
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_container<R: Read>(r: &mut R) -> Result<Container> {
    let mut magic = [0u8; 6];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let len = read_u32(r)? as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("config block is not UTF-8".into()))?;
    let mut config = Vec::new();
    for line in text.lines() {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format(format!("bad config line {line:?}")))?;
        config.push((k.to_string(), v.to_string()));
    }
    let n_blocks = read_u32(r)? as usize;
    let mut blocks = Vec::with_capacity(n_blocks);
    for _ in 0..n_blocks {
        let name_len = read_u32(r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("block name is not UTF-8".into()))?;
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        blocks.push((name, values));
    }
    Ok(Container { config, blocks })
}

impl TransducerParams {
    pub fn to_container(&self) -> Container {
        let c = &self.config;
        let config = vec![
            ("kind".to_string(), "transducer".to_string()),
            ("vocab".to_string(), c.vocab.names().join(" ")),
            ("blank".to_string(), c.vocab.blank_name().to_string()),
            ("input_dim".to_string(), c.input_dim.to_string()),
            ("window".to_string(), c.window.to_string()),
            ("encoder_hidden".to_string(), c.encoder_hidden.to_string()),
            ("encoder_dim".to_string(), c.encoder_dim.to_string()),
            ("embed_dim".to_string(), c.embed_dim.to_string()),
            ("predictor".to_string(), c.predictor.name().to_string()),
            ("predictor_dim".to_string(), c.predictor_dim.to_string()),
            ("joint_hidden".to_string(), c.joint_hidden.to_string()),
        ];
        let blocks =
            self.blocks().iter().map(|b| (b.name.clone(), self.data[b.offset..b.offset + b.len].to_vec())).collect();
        Container { config, blocks }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind")? != "transducer" {
            return Err(Error::Format("checkpoint does not hold a transducer".into()));
        }
        let vocab = Vocabulary::new(c.get("vocab")?.split_whitespace().map(str::to_string).collect(), c.get("blank")?)?;
        let config = ModelConfig {
            vocab,
            input_dim: c.get_usize("input_dim")?,
            window: c.get_usize("window")?,
            encoder_hidden: c.get_usize("encoder_hidden")?,
            encoder_dim: c.get_usize("encoder_dim")?,
            embed_dim: c.get_usize("embed_dim")?,
            predictor: PredictorKind::parse(c.get("predictor")?)?,
            predictor_dim: c.get_usize("predictor_dim")?,
            joint_hidden: c.get_usize("joint_hidden")?,
        };
        let mut p = TransducerParams::zeros(config)?;
        let expected = p.blocks().to_vec();
        if expected.len() != c.blocks.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} blocks, configuration needs {}",
                c.blocks.len(),
                expected.len()
            )));
        }
        for (spec, (name, values)) in expected.iter().zip(&c.blocks) {
            if spec.name != *name || spec.len != values.len() {
                return Err(Error::Format(format!("unexpected block {name:?} ({} values)", values.len())));
            }
            p.data[spec.offset..spec.offset + spec.len].copy_from_slice(values);
        }
        Ok(p)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let mut cfg = ModelConfig::new(Vocabulary::with_size(4).unwrap(), 3);
        cfg.predictor = PredictorKind::Lstm;
        let mut p = TransducerParams::new(cfg, 17, 0.1).unwrap();
        p.as_mut_slice()[0] = -0.0;
        p.as_mut_slice()[1] = f64::MIN_POSITIVE / 3.0;
        let mut bytes = Vec::new();
        write_container(&mut bytes, &p.to_container()).unwrap();
        assert_eq!(&bytes[..6], b"TSLAB1");
        let q = TransducerParams::from_container(&read_container(&mut bytes.as_slice()).unwrap()).unwrap();
        assert_eq!(
            p.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            q.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(p.config(), q.config());
        let mut again = Vec::new();
        write_container(&mut again, &q.to_container()).unwrap();
        assert_eq!(bytes, again);
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"TSLAB2\0\0\0\0".to_vec();
        assert!(matches!(read_container(&mut bytes.as_slice()), Err(Error::Format(_))));
    }
}
