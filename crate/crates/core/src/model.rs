//! Full model assembly: parameters, batch examples and the forward pass.

use std::rc::Rc;

use patclass_tensor::{Element, Graph, ParamId, ParamStore, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::corpus::{PatentRecord, Vocabulary, MASK};
use crate::history::{HistoryModule, HistoryNode};
use crate::icl::Icl;
use crate::predictor::{bce_loss, label_attention, targets, Decoder};
use crate::taxonomy::Taxonomy;
use crate::text::{embed_words, time_major, BiLstm};
use crate::{Error, Result};

/// One patent ready for the forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub id: String,
    /// Valid token ids (no padding), at least one.
    pub words: Vec<usize>,
    /// History, oldest first.
    pub history: Vec<HistoryNode>,
    /// Code indices at the target level.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub taxonomy: Taxonomy,
    pub vocab: Vocabulary,
    pub word_emb: ParamId,
    pub lstm: BiLstm,
    pub icl: Option<Icl>,
    /// `H^S`: `[codes, 2F]`.
    pub static_codes: ParamId,
    pub history: Option<HistoryModule>,
    pub decoder: Decoder,
}

impl Model {
    /// Registers every parameter the configuration uses, initialised from
    /// `config.seed`.
    pub fn new<T: Element>(
        config: ModelConfig,
        taxonomy: Taxonomy,
        vocab: Vocabulary,
    ) -> Result<(Self, ParamStore<T>)> {
        config.validate(taxonomy.depth())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (t, f, q) = (config.word_dim, config.hidden, config.level);
        let codes = taxonomy.level_size(q);
        let word_emb = store.insert_uniform("word_emb", vocab.len(), t, t, &mut rng)?;
        let lstm = BiLstm::register(&mut store, &mut rng, t, f)?;
        let mut icl = Icl::register(&mut store, &mut rng, &taxonomy, config.icl_mode, q, 2 * f)?;
        if let Some(icl) = icl.as_mut().filter(|_| !config.sibling_self) {
            icl.exclude_self(&taxonomy)?;
        }
        let static_codes = store.insert_uniform("static_codes", codes, 2 * f, 2 * f, &mut rng)?;
        let history = if config.history {
            let mut h = HistoryModule::register(
                &mut store,
                &mut rng,
                t,
                f,
                codes,
                config.gcn_layers,
                config.window,
                config.use_text,
                config.use_label,
                config.use_pe,
            )?;
            h.reverse_edges = config.reverse_edges;
            Some(h)
        } else {
            None
        };
        let decoder = Decoder::register(&mut store, &mut rng, f, codes)?;
        Ok((
            Self {
                config,
                taxonomy,
                vocab,
                word_emb,
                lstm,
                icl,
                static_codes,
                history,
                decoder,
            },
            store,
        ))
    }

    pub fn codes(&self) -> usize {
        self.taxonomy.level_size(self.config.level)
    }

    /// Overwrites embedding rows of known words with pretrained vectors.
    /// Returns the number of rows replaced.
    pub fn load_vectors<T: Element>(
        &self,
        store: &mut ParamStore<T>,
        dim: usize,
        vectors: &[(String, Vec<f32>)],
    ) -> Result<usize> {
        if dim != self.config.word_dim {
            return Err(Error::Config(format!(
                "vector width {dim} differs from word_dim {}",
                self.config.word_dim
            )));
        }
        let table = &mut store.get_mut(self.word_emb).value;
        let mut hits = 0;
        for (word, v) in vectors {
            if !self.vocab.contains(word) {
                continue;
            }
            let row = self.vocab.id(word);
            for (k, &x) in v.iter().enumerate() {
                table.data_mut()[row * dim + k] = T::num(x as f64);
            }
            hits += 1;
        }
        Ok(hits)
    }

    fn token_ids(&self, words: &[String]) -> Vec<usize> {
        let enc = self.vocab.encode_text(words, self.config.max_words);
        if enc.len == 0 {
            vec![MASK]
        } else {
            enc.valid().to_vec()
        }
    }

    /// Builds an example from a record and its (oldest-first) history.
    pub fn example(&self, record: &PatentRecord, history: &[&PatentRecord]) -> Example {
        let q = self.config.level;
        Example {
            id: record.id.clone(),
            words: self.token_ids(&record.words),
            history: history
                .iter()
                .map(|h| HistoryNode {
                    words: self.token_ids(&h.words),
                    labels: h.labels_at(q).to_vec(),
                })
                .collect(),
            labels: record.labels_at(q).to_vec(),
        }
    }

    /// Code representations used by the first attention pass.
    pub fn code_queries<T: Element>(&self, g: &Graph<T>, store: &ParamStore<T>) -> Result<Var> {
        match &self.icl {
            Some(icl) => icl.forward(g, store, &self.taxonomy, self.config.dropout),
            None => Ok(g.param(store, self.static_codes)),
        }
    }

    /// Probabilities `[batch, codes]`.
    pub fn forward<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        batch: &[&Example],
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let b = batch.len();
        let steps = batch.iter().map(|e| e.words.len()).max().unwrap_or(1).max(1);
        let seqs: Vec<&[usize]> = batch.iter().map(|e| e.words.as_slice()).collect();
        let lens: Vec<usize> = seqs.iter().map(|s| s.len()).collect();
        if lens.contains(&0) {
            return Err(Error::Contract("example without words".into()));
        }
        let x = embed_words(g, store, self.word_emb, &time_major(&seqs, steps))?;
        let v = self.lstm.encode_batch(g, store, x, &lens)?;
        let v = g.dropout(v, self.config.dropout);

        let queries = self.code_queries(g, store)?;
        let statics = g.param(store, self.static_codes);
        let mut rows = Vec::with_capacity(b);
        for (i, &len) in lens.iter().enumerate() {
            let idx: Vec<usize> = (0..steps).map(|t| t * b + i).collect();
            let vb = g.gather_rows(v, Rc::new(idx))?;
            let mp = label_attention(g, queries, vb, len)?;
            let ms = label_attention(g, statics, vb, len)?;
            rows.push(g.concat_cols(&[mp, ms])?);
        }
        let m_t = g.concat_rows(&rows)?;
        let m_b = match &self.history {
            Some(h) => {
                let hs: Vec<Vec<HistoryNode>> = batch.iter().map(|e| e.history.clone()).collect();
                h.embed_batch(g, store, self.word_emb, &hs)?
            }
            None => g.constant(patclass_tensor::Tensor::zeros(&[b, 2 * self.config.hidden])),
        };
        self.decoder.predict(g, store, m_t, m_b, self.config.dropout)
    }

    /// Cross-entropy of the batch under the configured reduction.
    pub fn loss<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        batch: &[&Example],
    ) -> Result<Var> {
        let probs = self.forward(g, store, batch)?;
        let labels: Vec<&[usize]> = batch.iter().map(|e| e.labels.as_slice()).collect();
        let y = targets(&labels, self.codes());
        bce_loss(g, probs, &y, self.config.reduction.into())
    }
}
