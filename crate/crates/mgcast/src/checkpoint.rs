//! Self-describing binary checkpoints.
//!
//! Layout: magic `FVMG`, format version as `u32` LE, then sections of
//! `[tag: 4 bytes][len: u64 LE][payload]` until end of file. Floats are
//! stored as little-endian IEEE-754 bit patterns so a round trip is exact.

use std::io::{Read, Write};
use std::path::Path;

use mgcast_core::model::OperatorSpec;
use mgcast_core::ModelParams;

use crate::config::RunConfig;
use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::train::EpochRecord;

pub const MAGIC: &[u8; 4] = b"FVMG";
pub const FORMAT_VERSION: u32 = 1;

const CONFIG: &[u8; 4] = b"CONF";
const HASH: &[u8; 4] = b"HASH";
const SHAPES: &[u8; 4] = b"SHAP";
const PARAMS: &[u8; 4] = b"PARM";
const SCALER: &[u8; 4] = b"STDZ";
const HISTORY: &[u8; 4] = b"HIST";
const DATA_PATH: &[u8; 4] = b"DATA";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub run: RunConfig,
    /// Hash of `run` at training time.
    pub config_hash: String,
    pub params: ModelParams,
    pub standardizer: Standardizer,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters are stored.
    pub best_epoch: usize,
    /// Resolved data file used for training; absent for synthetic series.
    pub data_path: Option<String>,
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    what: &'static str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Data(format!(
                "checkpoint truncated in {}",
                self.what
            )));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        if n > self.buf.len() / 8 {
            return Err(Error::Data(format!(
                "checkpoint {} length {n} exceeds section",
                self.what
            )));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let mut section = |tag: &[u8; 4], payload: &[u8]| {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        };

        section(CONFIG, self.run.canonical_json().as_bytes());
        section(HASH, self.config_hash.as_bytes());
        section(
            SHAPES,
            serde_json::to_string(self.params.specs())
                .expect("specs serialize")
                .as_bytes(),
        );

        let mut blob = Vec::with_capacity(8 * (self.params.len() + 1));
        put_f64s(&mut blob, self.params.values());
        section(PARAMS, &blob);

        let mut blob = Vec::new();
        put_f64s(&mut blob, &self.standardizer.mean);
        put_f64s(&mut blob, &self.standardizer.std);
        blob.extend_from_slice(&self.standardizer.eps.to_le_bytes());
        section(SCALER, &blob);

        let mut blob = Vec::new();
        blob.extend_from_slice(&(self.best_epoch as u64).to_le_bytes());
        blob.extend_from_slice(&(self.history.len() as u64).to_le_bytes());
        for h in &self.history {
            blob.extend_from_slice(&(h.epoch as u64).to_le_bytes());
            blob.extend_from_slice(&h.train_loss.to_le_bytes());
            blob.extend_from_slice(&h.val_mse.to_le_bytes());
        }
        section(HISTORY, &blob);
        if let Some(path) = &self.data_path {
            section(DATA_PATH, path.as_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor {
            buf: bytes,
            what: "header",
        };
        if cur.take(4)? != MAGIC {
            return Err(Error::Data("not a checkpoint: bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {version}"
            )));
        }

        let mut sections: Vec<([u8; 4], &[u8])> = Vec::new();
        while !cur.buf.is_empty() {
            cur.what = "section header";
            let tag: [u8; 4] = cur.take(4)?.try_into().expect("4 bytes");
            let len = cur.u64()? as usize;
            cur.what = "section payload";
            sections.push((tag, cur.take(len)?));
        }
        let find = |tag: &[u8; 4]| {
            sections
                .iter()
                .find(|(t, _)| t == tag)
                .map(|(_, p)| *p)
                .ok_or_else(|| {
                    Error::Data(format!(
                        "checkpoint missing section {}",
                        String::from_utf8_lossy(tag)
                    ))
                })
        };
        let text = |tag: &[u8; 4]| -> Result<&str> {
            std::str::from_utf8(find(tag)?)
                .map_err(|_| Error::Data("checkpoint section is not UTF-8".into()))
        };

        let run: RunConfig = serde_json::from_str(text(CONFIG)?)
            .map_err(|e| Error::Data(format!("checkpoint config: {e}")))?;
        let config_hash = text(HASH)?.to_owned();
        let specs: Vec<OperatorSpec> = serde_json::from_str(text(SHAPES)?)
            .map_err(|e| Error::Data(format!("checkpoint shapes: {e}")))?;

        let mut c = Cursor {
            buf: find(PARAMS)?,
            what: "parameters",
        };
        let values = c.f64s()?;
        let params = ModelParams::from_parts(specs, values)
            .map_err(|e| Error::Data(format!("checkpoint parameters: {e}")))?;

        let mut c = Cursor {
            buf: find(SCALER)?,
            what: "standardizer",
        };
        let standardizer = Standardizer {
            mean: c.f64s()?,
            std: c.f64s()?,
            eps: c.f64()?,
        };

        let mut c = Cursor {
            buf: find(HISTORY)?,
            what: "history",
        };
        let best_epoch = c.u64()? as usize;
        let n = c.u64()? as usize;
        let mut history = Vec::with_capacity(n.min(c.buf.len() / 24));
        for _ in 0..n {
            history.push(EpochRecord {
                epoch: c.u64()? as usize,
                train_loss: c.f64()?,
                val_mse: c.f64()?,
            });
        }

        let data_path = match find(DATA_PATH) {
            Ok(_) => Some(text(DATA_PATH)?.to_owned()),
            Err(_) => None,
        };

        Ok(Checkpoint {
            run,
            config_hash,
            params,
            standardizer,
            history,
            best_epoch,
            data_path,
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
        std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open checkpoint {}: {e}", path.display())))?
            .read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn is_checkpoint(bytes: &[u8]) -> bool {
        bytes.starts_with(MAGIC)
    }
}
