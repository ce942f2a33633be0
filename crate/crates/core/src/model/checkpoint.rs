//! Self-describing binary checkpoints: config, vocabularies, named tensors
//! with group and trainability flags. Floats are stored as raw little-endian
//! bits, so a round trip is exact. Writes go to a temp file then rename.

use super::{EngineError, ModelConfig, Param, ParamGroup, Seq2SeqModel, Vocab};
use crate::tensor::Tensor;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SLCKPT01";

pub fn save_checkpoint(model: &Seq2SeqModel, path: &Path) -> Result<(), EngineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        let config = serde_json::to_vec(model.config()).expect("config serializes");
        write_bytes(&mut w, &config)?;
        write_vocab(&mut w, model.src_vocab())?;
        write_vocab(&mut w, model.tgt_vocab())?;
        write_u64(&mut w, model.params().len() as u64)?;
        for p in model.params() {
            write_bytes(&mut w, p.name.as_bytes())?;
            write_bytes(&mut w, p.group.name().as_bytes())?;
            w.write_all(&[p.trainable as u8])?;
            write_u64(&mut w, p.value.rows() as u64)?;
            write_u64(&mut w, p.value.cols() as u64)?;
            for v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Seq2SeqModel, EngineError> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EngineError::MalformedCheckpoint(
            "bad magic; not a scanlab checkpoint".into(),
        ));
    }
    let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r)?)
        .map_err(|e| EngineError::MalformedCheckpoint(format!("config: {e}")))?;
    let src_vocab = read_vocab(&mut r)?;
    let tgt_vocab = read_vocab(&mut r)?;
    let n = read_u64(&mut r)? as usize;
    let mut params = Vec::with_capacity(n);
    for _ in 0..n {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|e| EngineError::MalformedCheckpoint(e.to_string()))?;
        let group_name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|e| EngineError::MalformedCheckpoint(e.to_string()))?;
        let group = ParamGroup::from_name(&group_name).ok_or_else(|| {
            EngineError::MalformedCheckpoint(format!("unknown group '{group_name}'"))
        })?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let rows = read_u64(&mut r)? as usize;
        let cols = read_u64(&mut r)? as usize;
        let mut data = vec![0.0f64; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f64::from_le_bytes(buf);
        }
        params.push(Param {
            name,
            group,
            value: Tensor::from_vec(rows, cols, data),
            trainable: flag[0] != 0,
        });
    }
    Seq2SeqModel::from_parts(config, src_vocab, tgt_vocab, params)
}

impl Seq2SeqModel {
    pub(super) fn from_parts(
        config: ModelConfig,
        src_vocab: Vocab,
        tgt_vocab: Vocab,
        params: Vec<Param>,
    ) -> Result<Self, EngineError> {
        config.validate()?;
        if config.src_vocab != src_vocab.len() || config.tgt_vocab != tgt_vocab.len() {
            return Err(EngineError::MalformedCheckpoint(
                "vocabulary sizes disagree with config".into(),
            ));
        }
        Ok(Self {
            config,
            src_vocab,
            tgt_vocab,
            params,
        })
    }
}

fn write_u64<W: Write>(w: &mut W, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn write_bytes<W: Write>(w: &mut W, b: &[u8]) -> std::io::Result<()> {
    write_u64(w, b.len() as u64)?;
    w.write_all(b)
}

fn read_bytes<R: Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let len = read_u64(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn write_vocab<W: Write>(w: &mut W, v: &Vocab) -> std::io::Result<()> {
    write_u64(w, v.len() as u64)?;
    for t in v.tokens() {
        write_bytes(w, t.as_bytes())?;
    }
    Ok(())
}

fn read_vocab<R: Read>(r: &mut R) -> Result<Vocab, EngineError> {
    let n = read_u64(r)? as usize;
    let mut tokens = Vec::with_capacity(n);
    for _ in 0..n {
        tokens.push(
            String::from_utf8(read_bytes(r)?)
                .map_err(|e| EngineError::MalformedCheckpoint(e.to_string()))?,
        );
    }
    Ok(Vocab::from_ordered(tokens))
}
