//! Checkpoints carrying the configuration, vocabulary and taxonomy, and
//! code-embedding export.

use std::io::Write;
use std::path::Path;

use patclass_tensor::{Checkpoint, ParamId, ParamStore};
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::Vocabulary;
use crate::model::Model;
use crate::taxonomy::{Taxonomy, TaxonomyFile};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub taxonomy: TaxonomyFile,
    /// Corpus directory the model was trained on, if known.
    #[serde(default)]
    pub corpus: Option<String>,
}

pub fn to_checkpoint(model: &Model, store: &ParamStore<f32>, corpus: Option<&str>) -> Result<Checkpoint> {
    let meta = CheckpointMeta {
        config: model.config.clone(),
        vocab: model.vocab.words().to_vec(),
        taxonomy: model.taxonomy.to_file(),
        corpus: corpus.map(str::to_string),
    };
    Ok(Checkpoint::from_store(store, serde_json::to_value(meta)?))
}

pub fn save_model(
    path: impl AsRef<Path>,
    model: &Model,
    store: &ParamStore<f32>,
    corpus: Option<&str>,
) -> Result<()> {
    to_checkpoint(model, store, corpus)?.save(path)?;
    Ok(())
}

/// Rebuilds the model from a checkpoint's metadata and loads its tensors.
pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Model, ParamStore<f32>, CheckpointMeta)> {
    let meta: CheckpointMeta = serde_json::from_value(ck.meta.clone())
        .map_err(|e| Error::Checkpoint(format!("bad metadata: {e}")))?;
    let tax = Taxonomy::from_file(meta.taxonomy.clone())?;
    let vocab = Vocabulary::from_words(meta.vocab.clone())?;
    let (model, mut store) = Model::new::<f32>(meta.config.clone(), tax, vocab)?;
    ck.load_into(&mut store)?;
    Ok((model, store, meta))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Model, ParamStore<f32>, CheckpointMeta)> {
    from_checkpoint(&Checkpoint::load(path)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeVector {
    pub code: String,
    pub level: usize,
    pub vector: Vec<f32>,
}

/// Learned code vectors: taxonomy embeddings of every registered level, or
/// the static target-level embeddings for models without the taxonomy
/// module.
pub fn code_vectors(model: &Model, store: &ParamStore<f32>) -> Vec<CodeVector> {
    let mut out = Vec::new();
    let mut push = |level: usize, id: ParamId| {
        let t = store.value(id);
        for (i, code) in model.taxonomy.codes(level).iter().enumerate() {
            out.push(CodeVector {
                code: code.clone(),
                level,
                vector: t.row_slice(i).to_vec(),
            });
        }
    };
    if let Some(icl) = &model.icl {
        for (l, &id) in icl.emb.iter().enumerate() {
            push(l + 1, id);
        }
    } else {
        push(model.config.level, model.static_codes);
    }
    out
}

pub fn export_embeddings(model: &Model, store: &ParamStore<f32>, path: impl AsRef<Path>) -> Result<usize> {
    let rows = code_vectors(model, store);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in &rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(rows.len())
}
