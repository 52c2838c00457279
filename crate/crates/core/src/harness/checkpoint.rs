//! Versioned binary checkpoint container.
//!
//! Layout (little endian): magic `BIMCKPT\0`, `u32` version, `u32` section
//! count, then sections of `[4-byte tag][u64 length][payload]`:
//!
//! - `HEAD`: step and named `u64` counters
//! - `CONF`: the run configuration as TOML text
//! - `TENS`: named `f64` tensors
//! - `RNGS`: generator seed (32 bytes), stream, and word position

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{BimError, Result};

pub const MAGIC: &[u8; 8] = b"BIMCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngSnapshot {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: u64,
    pub counters: Vec<(String, u64)>,
    pub config_text: String,
    pub tensors: Vec<(String, Vec<f64>)>,
    pub rng: RngSnapshot,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&[f64]> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| BimError::Format(format!("checkpoint has no tensor {name:?}")))
    }

    pub fn counter(&self, name: &str) -> Result<u64> {
        self.counters
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| BimError::Format(format!("checkpoint has no counter {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = Vec::new();
        head.extend_from_slice(&self.step.to_le_bytes());
        head.extend_from_slice(&(self.counters.len() as u32).to_le_bytes());
        for (name, v) in &self.counters {
            put_name(&mut head, name);
            head.extend_from_slice(&v.to_le_bytes());
        }
        let mut tens = Vec::new();
        tens.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, data) in &self.tensors {
            put_name(&mut tens, name);
            tens.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                tens.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut rng = Vec::with_capacity(56);
        rng.extend_from_slice(&self.rng.seed);
        rng.extend_from_slice(&self.rng.stream.to_le_bytes());
        rng.extend_from_slice(&self.rng.word_pos.to_le_bytes());

        let sections: [(&[u8; 4], &[u8]); 4] = [
            (b"HEAD", &head),
            (b"CONF", self.config_text.as_bytes()),
            (b"TENS", &tens),
            (b"RNGS", &rng),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8, "magic")? != MAGIC {
            return Err(BimError::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(BimError::Format(format!(
                "checkpoint version {version}, this build reads version {VERSION}"
            )));
        }
        let n_sections = r.u32("section count")?;
        let (mut head, mut conf, mut tens, mut rngs) = (None, None, None, None);
        for _ in 0..n_sections {
            let tag: [u8; 4] = r.take(4, "section tag")?.try_into().expect("4 bytes");
            let len = r.u64("section length")? as usize;
            let payload = r.take(len, "section payload")?;
            match &tag {
                b"HEAD" => head = Some(payload),
                b"CONF" => conf = Some(payload),
                b"TENS" => tens = Some(payload),
                b"RNGS" => rngs = Some(payload),
                other => {
                    return Err(BimError::Format(format!(
                        "unknown section {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }
        if r.pos != bytes.len() {
            return Err(BimError::Format(format!(
                "{} trailing bytes after last section",
                bytes.len() - r.pos
            )));
        }
        let missing = |s: &str| BimError::Format(format!("checkpoint is missing section {s}"));

        let mut h = Reader {
            buf: head.ok_or_else(|| missing("HEAD"))?,
            pos: 0,
        };
        let step = h.u64("step")?;
        let counters = (0..h.u32("counter count")?)
            .map(|_| Ok((h.name()?, h.u64("counter")?)))
            .collect::<Result<Vec<_>>>()?;
        h.finish("HEAD")?;

        let config_text = String::from_utf8(conf.ok_or_else(|| missing("CONF"))?.to_vec())
            .map_err(|_| BimError::Format("config echo is not UTF-8".into()))?;

        let mut t = Reader {
            buf: tens.ok_or_else(|| missing("TENS"))?,
            pos: 0,
        };
        let n_tensors = t.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(n_tensors as usize);
        for _ in 0..n_tensors {
            let name = t.name()?;
            let len = t.u64("tensor length")? as usize;
            let raw = t.take(
                len.checked_mul(8)
                    .ok_or_else(|| BimError::Format("tensor too large".into()))?,
                "tensor data",
            )?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, data));
        }
        t.finish("TENS")?;

        let mut g = Reader {
            buf: rngs.ok_or_else(|| missing("RNGS"))?,
            pos: 0,
        };
        let seed: [u8; 32] = g.take(32, "rng seed")?.try_into().expect("32 bytes");
        let stream = g.u64("rng stream")?;
        let word_pos = u128::from_le_bytes(g.take(16, "rng position")?.try_into().expect("16 bytes"));
        g.finish("RNGS")?;

        Ok(Self {
            step,
            counters,
            config_text,
            tensors,
            rng: RngSnapshot { seed, stream, word_pos },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_name(out: &mut Vec<u8>, name: &str) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end =
            self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
                BimError::Format(format!("truncated checkpoint: {what} needs {n} bytes at offset {}", self.pos))
            })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn name(&mut self) -> Result<String> {
        let len = u16::from_le_bytes(self.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        String::from_utf8(self.take(len, "name")?.to_vec()).map_err(|_| BimError::Format("name is not UTF-8".into()))
    }

    fn finish(&self, section: &str) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(BimError::Format(format!(
                "section {section} has {} unread bytes",
                self.buf.len() - self.pos
            )));
        }
        Ok(())
    }
}
