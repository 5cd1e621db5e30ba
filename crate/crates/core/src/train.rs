//! Training loop with early stopping, batched inference and evaluation.

use std::time::Instant;

use patclass_tensor::{Adam, Element, Graph, ParamStore, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::corpus::{CorpusSplit, HistoryScope, Part, Vocabulary, WordVectors};
use crate::metrics::{evaluate_run, MetricTable, RankedPrediction};
use crate::model::{Example, Model};
use crate::taxonomy::{CodeRef, Taxonomy};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Sum of batch losses over the epoch.
    pub train_loss: f64,
    pub valid: Option<MetricTable>,
    /// Model-selection score (the validation selection metric).
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_score: f64,
    pub selection_k: usize,
    pub wall_secs: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.epochs.first().map_or(f64::NAN, |e| e.train_loss)
    }

    pub fn final_loss(&self) -> f64 {
        self.epochs.last().map_or(f64::NAN, |e| e.train_loss)
    }
}

/// Model, best parameters and the run's report.
#[derive(Clone, Debug)]
pub struct Trained {
    pub model: Model,
    pub store: ParamStore<f32>,
    pub report: TrainReport,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Pretrained word vectors: `(dim, rows)`.
    pub vectors: Option<WordVectors>,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

/// Vocabulary over the training split.
pub fn build_vocab(split: &CorpusSplit, min_count: usize) -> Vocabulary {
    Vocabulary::build(split.train.iter().map(|r| r.words.as_slice()), min_count)
}

/// Examples for one part of the split, with histories drawn from `scope`.
pub fn examples(model: &Model, split: &CorpusSplit, part: Part, scope: HistoryScope) -> Vec<Example> {
    let index = split.history_index(scope);
    let d = model.config.history_len;
    split
        .part(part)
        .iter()
        .map(|r| {
            let hist: Vec<_> = index
                .lookup(&r.assignee, r.time, d)
                .into_iter()
                .map(|h| split.get(h))
                .collect();
            model.example(r, &hist)
        })
        .collect()
}

/// Ks above the number of codes are dropped.
pub fn usable_ks(ks: &[usize], codes: usize) -> Vec<usize> {
    ks.iter().copied().filter(|&k| k >= 1 && k <= codes).collect()
}

pub fn train(
    config: ModelConfig,
    split: &CorpusSplit,
    taxonomy: &Taxonomy,
    options: &TrainOptions,
) -> Result<Trained> {
    let start = Instant::now();
    config.validate(taxonomy.depth())?;
    if split.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let vocab = build_vocab(split, config.min_count);
    let (model, mut store) = Model::new::<f32>(config, taxonomy.clone(), vocab)?;
    if let Some((dim, rows)) = &options.vectors {
        model.load_vectors(&mut store, *dim, rows)?;
    }
    let cfg = &model.config;
    let train_set = examples(&model, split, Part::Train, HistoryScope::TrainOnly);
    let valid_set = examples(&model, split, Part::Valid, HistoryScope::All);
    let selection_k = cfg.select_k.min(model.codes());

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7a1e);
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = (f64::NEG_INFINITY, 0usize, store.clone());
    let mut bad = 0usize;
    let mut epochs = Vec::new();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &train_set[i]).collect();
            let g = Graph::training(rng.random());
            let loss = model.loss(&g, &store, &batch)?;
            let value = g.value(loss).item() as f64;
            if !value.is_finite() {
                return Err(Error::NonFinite { epoch, batch: bi });
            }
            total += value;
            let grads = g.backward(loss)?;
            store.zero_grad();
            grads.accumulate_into(&mut store);
            fill_missing_grads(&mut store);
            adam.step(&mut store)?;
        }
        let (valid, score) = if valid_set.is_empty() {
            (None, -total)
        } else {
            let t = evaluate_examples(&model, &store, &valid_set, &[selection_k])?;
            let s = t.get(cfg.select_metric, selection_k).unwrap_or(0.0);
            (Some(t), s)
        };
        if options.verbose {
            eprintln!("epoch {epoch:>4}  loss {total:>12.4}  score {score:.4}");
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: total,
            valid,
            score,
        });
        if score > best.0 {
            best = (score, epoch, store.clone());
            bad = 0;
        } else {
            bad += 1;
            if bad >= cfg.patience.max(1) {
                break;
            }
        }
    }
    let (best_score, best_epoch, mut best_store) = best;
    best_store.zero_grad();
    Ok(Trained {
        model,
        store: best_store,
        report: TrainReport {
            epochs,
            best_epoch,
            best_score,
            selection_k,
            wall_secs: start.elapsed().as_secs_f64(),
        },
    })
}

fn fill_missing_grads<T: Element>(store: &mut ParamStore<T>) {
    for p in store.iter_mut() {
        if p.grad.is_none() {
            p.grad = Some(Tensor::zeros(p.value.shape()));
        }
    }
}

/// Probabilities per example, computed in fixed-size batches. Results do
/// not depend on `workers`.
pub fn predict_probs(model: &Model, store: &ParamStore<f32>, set: &[Example]) -> Result<Vec<Vec<f32>>> {
    let chunks: Vec<&[Example]> = set.chunks(model.config.batch_size.max(1)).collect();
    let run = |chunk: &&[Example]| -> Result<Vec<Vec<f32>>> {
        let g = Graph::new();
        let batch: Vec<&Example> = chunk.iter().collect();
        let p = model.forward(&g, store, &batch)?;
        let p = g.value(p);
        Ok((0..p.rows()).map(|r| p.row_slice(r).to_vec()).collect())
    };
    let parts: Vec<Result<Vec<Vec<f32>>>> = if model.config.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(model.config.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| chunks.par_iter().map(run).collect())
    } else {
        chunks.iter().map(run).collect()
    };
    let mut out = Vec::with_capacity(set.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate_examples(
    model: &Model,
    store: &ParamStore<f32>,
    set: &[Example],
    ks: &[usize],
) -> Result<MetricTable> {
    let probs = predict_probs(model, store, set)?;
    let preds: Vec<RankedPrediction> = set
        .iter()
        .zip(&probs)
        .map(|(e, p)| RankedPrediction::from_scores(e.id.clone(), p, e.labels.clone()))
        .collect();
    evaluate_run(&preds, &usable_ks(ks, model.codes()))
}

/// Metrics on one part of `split`; history may come from every part but
/// never from the patent's own time or later.
pub fn evaluate(
    model: &Model,
    store: &ParamStore<f32>,
    split: &CorpusSplit,
    part: Part,
    ks: &[usize],
) -> Result<MetricTable> {
    let set = examples(model, split, part, HistoryScope::All);
    evaluate_examples(model, store, &set, ks)
}

/// Metrics at a coarser `level` than the model predicts, scoring each
/// ancestor by its best descendant's probability.
pub fn evaluate_at_level(
    model: &Model,
    store: &ParamStore<f32>,
    split: &CorpusSplit,
    part: Part,
    level: usize,
    ks: &[usize],
) -> Result<MetricTable> {
    let fine = model.config.level;
    if level == 0 || level > fine {
        return Err(Error::Config(format!("level {level} is not in 1..={fine}")));
    }
    let tax = &model.taxonomy;
    let up: Vec<usize> = (0..tax.level_size(fine))
        .map(|index| tax.ancestor(CodeRef { level: fine, index }, level).map(|c| c.index))
        .collect::<Result<_>>()?;
    let set = examples(model, split, part, HistoryScope::All);
    let probs = predict_probs(model, store, &set)?;
    let preds: Vec<RankedPrediction> = set
        .iter()
        .zip(&probs)
        .map(|(e, p)| {
            let mut coarse = vec![f32::NEG_INFINITY; tax.level_size(level)];
            for (c, &v) in p.iter().enumerate() {
                coarse[up[c]] = coarse[up[c]].max(v);
            }
            let mut truth: Vec<usize> = e.labels.iter().map(|&c| up[c]).collect();
            truth.sort_unstable();
            truth.dedup();
            RankedPrediction::from_scores(e.id.clone(), &coarse, truth)
        })
        .collect();
    evaluate_run(&preds, &usable_ks(ks, tax.level_size(level)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeProb {
    pub code: String,
    pub prob: f32,
}

/// One output line of `predict`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopK {
    pub id: String,
    pub topk: Vec<CodeProb>,
}

/// Best `k` codes per example, by descending probability then code order.
pub fn predict_topk(model: &Model, store: &ParamStore<f32>, set: &[Example], k: usize) -> Result<Vec<TopK>> {
    let probs = predict_probs(model, store, set)?;
    let codes = model.taxonomy.codes(model.config.level);
    Ok(set
        .iter()
        .zip(&probs)
        .map(|(e, p)| TopK {
            id: e.id.clone(),
            topk: crate::metrics::rank_codes(p)
                .into_iter()
                .take(k)
                .map(|c| CodeProb {
                    code: codes[c].clone(),
                    prob: p[c],
                })
                .collect(),
        })
        .collect())
}
