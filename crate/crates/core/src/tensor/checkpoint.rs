use std::io::{Read, Write};

use indexmap::IndexMap;

use super::{Result, Tensor, TensorError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VLPCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A serialized parameter set.
///
/// Layout (all integers little-endian `u32`):
/// magic `VLPCKPT\0`, version, 32-byte config digest, metadata length and
/// UTF-8 JSON metadata, parameter count, then per parameter: name length,
/// UTF-8 name, rank, dims, and `f32` values in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_digest: [u8; 32],
    pub metadata: serde_json::Value,
    pub params: IndexMap<String, Tensor<f32>>,
}

fn put_u32(w: &mut impl Write, x: usize) -> Result<()> {
    let x = u32::try_from(x).map_err(|_| TensorError::Checkpoint(format!("value {x} exceeds u32")))?;
    w.write_all(&x.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_bytes(r: &mut impl Read, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(TensorError::Checkpoint("unexpected end of file".into()));
    }
    Ok(buf)
}

fn get_string(r: &mut impl Read) -> Result<String> {
    let n = get_u32(r)?;
    String::from_utf8(get_bytes(r, n)?).map_err(|e| TensorError::Checkpoint(e.to_string()))
}

pub fn write_checkpoint(w: &mut impl Write, ckpt: &Checkpoint) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION as usize)?;
    w.write_all(&ckpt.config_digest)?;
    let meta = serde_json::to_vec(&ckpt.metadata).map_err(|e| TensorError::Checkpoint(e.to_string()))?;
    put_u32(w, meta.len())?;
    w.write_all(&meta)?;
    put_u32(w, ckpt.params.len())?;
    for (name, t) in &ckpt.params {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, t.shape().len())?;
        for &d in t.shape() {
            put_u32(w, d)?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint> {
    let magic = get_bytes(r, 8).map_err(|_| TensorError::Checkpoint("not a checkpoint file".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(TensorError::Checkpoint("not a checkpoint file".into()));
    }
    let version = get_u32(r)? as u32;
    if version != CHECKPOINT_VERSION {
        return Err(TensorError::Checkpoint(format!(
            "unsupported version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let mut config_digest = [0u8; 32];
    r.read_exact(&mut config_digest)?;
    let meta_len = get_u32(r)?;
    let metadata = serde_json::from_slice(&get_bytes(r, meta_len)?)
        .map_err(|e| TensorError::Checkpoint(format!("metadata: {e}")))?;
    let count = get_u32(r)?;
    let mut params = IndexMap::with_capacity(count);
    for _ in 0..count {
        let name = get_string(r)?;
        let rank = get_u32(r)?;
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = get_bytes(r, len * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if params.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(TensorError::DuplicateParam(name));
        }
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(TensorError::Checkpoint("trailing bytes after parameters".into()));
    }
    Ok(Checkpoint {
        config_digest,
        metadata,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let mut params = IndexMap::new();
        params.insert("b".to_string(), Tensor::vector(vec![1.5f32, -2.0]));
        params.insert("a.w".to_string(), Tensor::new(vec![2, 1, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap());
        Checkpoint {
            config_digest: [7u8; 32],
            metadata: serde_json::json!({"tags": ["NN", "JJ"]}),
            params,
        }
    }

    #[test]
    fn round_trip_preserves_order_and_bytes() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let back = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back, sample());
        assert_eq!(back.params.keys().collect::<Vec<_>>(), vec!["b", "a.w"]);
        let mut again = Vec::new();
        write_checkpoint(&mut again, &back).unwrap();
        assert_eq!(buf, again);
        assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
        assert_eq!(&buf[8..12], &1u32.to_le_bytes());
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        assert!(read_checkpoint(&mut &buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[8] = 9;
        assert!(matches!(read_checkpoint(&mut bad.as_slice()), Err(TensorError::Checkpoint(_))));
        assert!(read_checkpoint(&mut &b"nope"[..]).is_err());
    }
}
