//! Binary model checkpoints with a JSON sidecar.
//!
//! Layout: 8-byte magic, `u32` format version, `u32` kind code, `u64` d,
//! `u64` |V|, `u64` |R|, then the entity and relation tables as row-major
//! little-endian `f64`. All integers are little-endian.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbeddingModel, ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Vocab};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"KGSLCKPT";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointSidecar {
    pub kind: ModelKind,
    pub dim: usize,
    pub config: TrainConfig,
    pub entity_vocab_sha256: String,
    pub relation_vocab_sha256: String,
}

/// SHA-256 over the labels in id order, each terminated by `\n`.
pub fn vocab_hash(vocab: &Vocab) -> String {
    let mut h = Sha256::new();
    for l in vocab.labels() {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_checkpoint<W: Write>(model: &EmbeddingModel, mut w: W) -> Result<()> {
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(CHECKPOINT_MAGIC).map_err(io)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&model.kind().code().to_le_bytes()).map_err(io)?;
    for n in [model.dim(), model.num_entities(), model.num_relations()] {
        w.write_all(&(n as u64).to_le_bytes()).map_err(io)?;
    }
    for v in model.entity_table().iter().chain(model.relation_table()) {
        w.write_all(&v.to_le_bytes()).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<EmbeddingModel> {
    let mut buf8 = [0u8; 8];
    let mut buf4 = [0u8; 4];
    let trunc = |e: std::io::Error| Error::Checkpoint(format!("truncated checkpoint: {e}"));
    r.read_exact(&mut buf8).map_err(trunc)?;
    if &buf8 != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    r.read_exact(&mut buf4).map_err(trunc)?;
    let version = u32::from_le_bytes(buf4);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    r.read_exact(&mut buf4).map_err(trunc)?;
    let code = u32::from_le_bytes(buf4);
    let kind = ModelKind::from_code(code).ok_or_else(|| Error::Checkpoint(format!("unknown model kind code {code}")))?;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        r.read_exact(&mut buf8).map_err(trunc)?;
        *d = u64::from_le_bytes(buf8) as usize;
    }
    let [dim, ne, nr] = dims;
    let mut read_table = |len: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes).map_err(trunc)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    };
    let entity = read_table(ne * kind.entity_width(dim))?;
    let relation = read_table(nr * kind.relation_width(dim))?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(trunc)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    EmbeddingModel::from_tables(kind, dim, entity, relation).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes `path` and its `.json` sidecar, each via a temporary file + rename.
pub fn save_checkpoint(path: &Path, model: &EmbeddingModel, config: &TrainConfig, graph: &KnowledgeGraph) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        write_checkpoint(model, BufWriter::new(f))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    let sidecar = CheckpointSidecar {
        kind: model.kind(),
        dim: model.dim(),
        config: config.clone(),
        entity_vocab_sha256: vocab_hash(graph.entities()),
        relation_vocab_sha256: vocab_hash(graph.relations()),
    };
    let side = sidecar_path(path);
    let tmp = side.with_extension("json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&sidecar)?).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, &side).map_err(|e| Error::io(&side, e))
}

/// Loads a checkpoint and its sidecar. With `graph`, the vocabulary hashes
/// must match.
pub fn load_checkpoint(path: &Path, graph: Option<&KnowledgeGraph>) -> Result<(EmbeddingModel, CheckpointSidecar)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let model = read_checkpoint(BufReader::new(f))?;
    let side = sidecar_path(path);
    let text = fs::read(&side).map_err(|e| Error::io(&side, e))?;
    let sidecar: CheckpointSidecar = serde_json::from_slice(&text)?;
    if sidecar.kind != model.kind() || sidecar.dim != model.dim() {
        return Err(Error::Checkpoint("sidecar does not describe the checkpoint".into()));
    }
    if let Some(g) = graph {
        if sidecar.entity_vocab_sha256 != vocab_hash(g.entities())
            || sidecar.relation_vocab_sha256 != vocab_hash(g.relations())
        {
            return Err(Error::Checkpoint("checkpoint was trained on a different vocabulary".into()));
        }
    }
    Ok((model, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::synthetic::bijection_pairs;

    #[test]
    fn round_trip_all_kinds() {
        for kind in ModelKind::ALL {
            let m = EmbeddingModel::init(kind, 3, 5, 2, &mut rng_from_seed(1)).unwrap();
            let mut bytes = Vec::new();
            write_checkpoint(&m, &mut bytes).unwrap();
            assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
            assert_eq!(read_checkpoint(bytes.as_slice()).unwrap(), m);
            assert!(read_checkpoint(&bytes[..bytes.len() - 1]).is_err());
            let mut extra = bytes.clone();
            extra.push(0);
            assert!(read_checkpoint(extra.as_slice()).is_err());
        }
        assert!(read_checkpoint(&b"NOTACKPT"[..]).is_err());
    }

    #[test]
    fn sidecar_checks_vocabulary() {
        let dir = tempfile::tempdir().unwrap();
        let g = bijection_pairs(3);
        let m = EmbeddingModel::init(ModelKind::TransE, 2, 6, 2, &mut rng_from_seed(1)).unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &m, &TrainConfig::default(), &g).unwrap();
        let (back, side) = load_checkpoint(&path, Some(&g)).unwrap();
        assert_eq!(back, m);
        assert_eq!(side.entity_vocab_sha256.len(), 64);
        let other = bijection_pairs(4);
        assert!(load_checkpoint(&path, Some(&other)).is_err());
    }
}
