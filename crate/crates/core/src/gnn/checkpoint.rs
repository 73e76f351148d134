//! Binary checkpoint: 8-byte magic, `u32` version, the configuration
//! (`u32` widths, `f64` learning rate, `u32` batch size and epochs), a
//! `u64` parameter count, then every parameter as a little-endian `f32` in
//! tensor layout order.

use std::io::{Read, Write};
use std::path::Path;

use super::config::GnnConfig;
use super::model::GnnModel;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GRIDNSE\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn write_checkpoint(model: &GnnModel, out: &mut impl Write) -> Result<()> {
    let c = &model.config;
    let mut buf = Vec::with_capacity(64 + 4 * model.params.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [c.embedding, c.message, c.layers, c.message_hidden, c.head_hidden, c.input_width] {
        put_u32(&mut buf, v)?;
    }
    buf.extend_from_slice(&c.learning_rate.to_le_bytes());
    put_u32(&mut buf, c.batch_size)?;
    put_u32(&mut buf, c.epochs)?;
    buf.extend_from_slice(&(model.params.len() as u64).to_le_bytes());
    for p in &model.params {
        buf.extend_from_slice(&(*p as f32).to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    data: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

pub fn read_checkpoint(input: &mut impl Read) -> Result<GnnModel> {
    let mut data = Vec::new();
    input.read_to_end(&mut data)?;
    let mut cur = Cursor { data: &data, pos: 0 };
    if cur.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = cur.u32()? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut w = [0usize; 6];
    for v in &mut w {
        *v = cur.u32()?;
    }
    let learning_rate = f64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes"));
    let batch_size = cur.u32()?;
    let epochs = cur.u32()?;
    let cfg = GnnConfig {
        embedding: w[0],
        message: w[1],
        layers: w[2],
        message_hidden: w[3],
        head_hidden: w[4],
        input_width: w[5],
        learning_rate,
        batch_size,
        epochs,
    };
    let mut model = GnnModel::zeros(&cfg).map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = u64::from_le_bytes(cur.take(8)?.try_into().expect("8 bytes")) as usize;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "header promises {count} parameters, configuration needs {}",
            model.params.len()
        )));
    }
    for p in model.params.iter_mut() {
        *p = f32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes")) as f64;
    }
    if cur.pos != data.len() {
        return Err(Error::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &GnnModel, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    write_checkpoint(model, &mut f)
}

pub fn load_checkpoint(path: &Path) -> Result<GnnModel> {
    let mut f = std::fs::File::open(path)?;
    read_checkpoint(&mut f)
}

/// First 12 hex digits of the SHA-256 of the serialised model.
pub fn checkpoint_hash(model: &GnnModel) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut buf = Vec::new();
    write_checkpoint(model, &mut buf)?;
    let digest = Sha256::digest(&buf);
    Ok(digest[..6].iter().map(|b| format!("{b:02x}")).collect())
}
