//! Assignee history: sliding-window patent graphs, dual text/label feature
//! channels with positional encodings, graph convolutions and readout.

use std::rc::Rc;

use patclass_tensor::{Element, Graph, ParamId, ParamStore, SparseMatrix, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PAD;
use crate::{Error, Result};

pub const PE_BASE: f64 = 10_000.0;

/// Non-zero entries of the `[n, n]` window adjacency: row `r` reads from
/// itself and its `window - 1` predecessors with weight `1 / (r - c + 1)`.
pub fn adjacency_entries<T: Element>(n: usize, window: usize) -> Vec<(usize, usize, T)> {
    let mut out = Vec::new();
    for r in 0..n {
        for c in r.saturating_sub(window.saturating_sub(1))..=r {
            out.push((r, c, T::num(1.0 / (r - c + 1) as f64)));
        }
    }
    out
}

/// Window adjacency over a history of `n` patents; `None` when empty.
pub fn build_patent_graph<T: Element>(n: usize, window: usize) -> Option<SparseMatrix<T>> {
    (n > 0).then(|| SparseMatrix::from_triplets(n, n, &adjacency_entries(n, window)))
}

/// Sinusoidal table `[rows, d]`.
pub fn positional_table<T: Element>(rows: usize, d: usize, base: f64) -> Result<Tensor<T>> {
    if !d.is_multiple_of(2) {
        return Err(Error::Config(format!("positional encoding width {d} must be even")));
    }
    let mut data = Vec::with_capacity(rows * d);
    for k in 0..rows {
        for i in 0..d / 2 {
            let angle = k as f64 / base.powf(2.0 * i as f64 / d as f64);
            data.push(T::num(angle.sin()));
            data.push(T::num(angle.cos()));
        }
    }
    Ok(Tensor::new(vec![rows, d], data)?)
}

/// `x ‖ PE`, or `x ‖ 0` when `enabled` is false.
pub fn positional_encode<T: Element>(g: &Graph<T>, x: Var, enabled: bool) -> Result<Var> {
    let shape = g.shape(x);
    let pe = if enabled {
        positional_table(shape[0], shape[1], PE_BASE)?
    } else {
        Tensor::zeros(&shape)
    };
    Ok(g.concat_cols(&[x, g.constant(pe)])?)
}

/// `H <- relu(A H W)` for each layer weight.
pub fn gcn_forward<T: Element>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    adj: &Rc<SparseMatrix<T>>,
    h0: Var,
    layers: &[ParamId],
) -> Result<Var> {
    let mut h = h0;
    for &w in layers {
        let hw = g.matmul(h, g.param(store, w))?;
        h = g.relu(g.sparse_matmul(adj.clone(), hw)?);
    }
    Ok(h)
}

/// Mean over nodes of each channel, label channel first: `[1, 2F]`.
pub fn readout_fuse<T: Element>(g: &Graph<T>, h_text: Var, h_label: Var) -> Result<Var> {
    Ok(g.concat_cols(&[g.mean_rows(h_label), g.mean_rows(h_text)])?)
}

/// One historical patent as the history module sees it.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoryNode {
    /// Encoded token ids (PAD entries are ignored).
    pub words: Vec<usize>,
    /// Code indices at the target level.
    pub labels: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct HistoryModule {
    pub use_pe: bool,
    pub window: usize,
    pub hidden: usize,
    /// `W_B`: `[codes, 2F]`.
    pub label_table: Option<ParamId>,
    pub text_layers: Vec<ParamId>,
    pub label_layers: Vec<ParamId>,
    /// Transposed adjacency: each patent reads from later ones.
    pub reverse_edges: bool,
}

impl HistoryModule {
    #[allow(clippy::too_many_arguments)]
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        word_dim: usize,
        hidden: usize,
        codes: usize,
        layers: usize,
        window: usize,
        use_text: bool,
        use_label: bool,
        use_pe: bool,
    ) -> Result<Self> {
        let mut stack = |name: &str, input: usize| -> Result<Vec<ParamId>> {
            (0..layers)
                .map(|i| {
                    let fan_in = if i == 0 { input } else { hidden };
                    Ok(store.insert_uniform(format!("history.{name}{i}"), fan_in, hidden, fan_in, rng)?)
                })
                .collect()
        };
        let text_layers = if use_text { stack("text", 2 * word_dim)? } else { Vec::new() };
        let label_layers = if use_label { stack("label", 4 * hidden)? } else { Vec::new() };
        let label_table = if use_label {
            Some(store.insert_uniform("history.label_table", codes, 2 * hidden, codes, rng)?)
        } else {
            None
        };
        Ok(Self {
            use_pe,
            window,
            hidden,
            label_table,
            text_layers,
            label_layers,
            reverse_edges: false,
        })
    }

    /// Behaviour vectors `[histories.len(), 2F]`; empty histories yield zero
    /// rows. All graphs of the batch are processed as one block-diagonal
    /// graph.
    pub fn embed_batch<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        word_emb: ParamId,
        histories: &[Vec<HistoryNode>],
    ) -> Result<Var> {
        let batch = histories.len();
        let f = self.hidden;
        let nodes: usize = histories.iter().map(Vec::len).sum();
        if nodes == 0 {
            return Ok(g.constant(Tensor::zeros(&[batch, 2 * f])));
        }
        let mut adj = Vec::new();
        let mut pool = Vec::new();
        let mut positions = Vec::with_capacity(nodes);
        let mut start = 0;
        for (b, h) in histories.iter().enumerate() {
            adj.extend(
                adjacency_entries::<T>(h.len(), self.window)
                    .into_iter()
                    .map(|(r, c, w)| if self.reverse_edges { (c, r, w) } else { (r, c, w) })
                    .map(|(r, c, w)| (start + r, start + c, w)),
            );
            let share = T::num(1.0 / h.len().max(1) as f64);
            pool.extend((0..h.len()).map(|k| (b, start + k, share)));
            positions.extend(0..h.len());
            start += h.len();
        }
        let adj = Rc::new(SparseMatrix::from_triplets(nodes, nodes, &adj));
        let pool = Rc::new(SparseMatrix::from_triplets(batch, nodes, &pool));
        let all: Vec<&HistoryNode> = histories.iter().flatten().collect();

        let with_pe = |x: Var| -> Result<Var> {
            let d = g.shape(x)[1];
            let pe = if self.use_pe {
                let table = positional_table::<T>(positions.iter().max().map_or(0, |m| m + 1), d, PE_BASE)?;
                let data = positions
                    .iter()
                    .flat_map(|&p| table.row_slice(p).to_vec())
                    .collect();
                Tensor::new(vec![nodes, d], data)?
            } else {
                Tensor::zeros(&[nodes, d])
            };
            Ok(g.concat_cols(&[x, g.constant(pe)])?)
        };

        let text = if self.text_layers.is_empty() {
            g.constant(Tensor::zeros(&[batch, f]))
        } else {
            let vocab = store.value(word_emb).rows();
            let mut bag = Vec::new();
            for (r, n) in all.iter().enumerate() {
                let valid: Vec<usize> = n.words.iter().copied().filter(|&w| w != PAD).collect();
                let share = T::num(1.0 / valid.len().max(1) as f64);
                bag.extend(valid.into_iter().map(|w| (r, w, share)));
            }
            let bag = Rc::new(SparseMatrix::from_triplets(nodes, vocab, &bag));
            let xc = g.sparse_matmul(bag, g.param(store, word_emb))?;
            let h = gcn_forward(g, store, &adj, with_pe(xc)?, &self.text_layers)?;
            g.sparse_matmul(pool.clone(), h)?
        };
        let label = match self.label_table {
            None => g.constant(Tensor::zeros(&[batch, f])),
            Some(table) => {
                let codes = store.value(table).rows();
                let hot: Vec<(usize, usize, T)> = all
                    .iter()
                    .enumerate()
                    .flat_map(|(r, n)| n.labels.iter().map(move |&c| (r, c, T::one())))
                    .collect();
                let hot = Rc::new(SparseMatrix::from_triplets(nodes, codes, &hot));
                let xs = g.sparse_matmul(hot, g.param(store, table))?;
                let h = gcn_forward(g, store, &adj, with_pe(xs)?, &self.label_layers)?;
                g.sparse_matmul(pool, h)?
            }
        };
        Ok(g.concat_cols(&[label, text])?)
    }
}
