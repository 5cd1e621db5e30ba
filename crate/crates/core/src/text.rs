//! Word embeddings and the bidirectional LSTM text encoder.

use std::rc::Rc;

use patclass_tensor::{Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::corpus::PAD;
use crate::Result;

/// Weights of one LSTM direction; gate order is input, forget, output,
/// candidate.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
}

impl LstmCell {
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            wx: store.insert_uniform(format!("{name}.wx"), input, 4 * hidden, input, rng)?,
            wh: store.insert_uniform(format!("{name}.wh"), hidden, 4 * hidden, hidden, rng)?,
            b: store.insert_uniform(format!("{name}.b"), 1, 4 * hidden, hidden, rng)?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BiLstm {
    pub fwd: LstmCell,
    pub bwd: LstmCell,
    pub hidden: usize,
}

impl BiLstm {
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        input: usize,
        hidden: usize,
    ) -> Result<Self> {
        Ok(Self {
            fwd: LstmCell::register(store, rng, "lstm.fwd", input, hidden)?,
            bwd: LstmCell::register(store, rng, "lstm.bwd", input, hidden)?,
            hidden,
        })
    }

    /// Encodes `batch` sequences laid out time-major: row `t * batch + b`
    /// of `x` is token `t` of sequence `b`. Returns `[steps * batch, 2F]`
    /// in the same layout; rows at or beyond a sequence's length are zero.
    pub fn encode_batch<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        lens: &[usize],
    ) -> Result<Var> {
        let batch = lens.len();
        let steps = g.shape(x)[0] / batch.max(1);
        let masks: Vec<Rc<Vec<bool>>> = (0..steps)
            .map(|t| Rc::new(lens.iter().map(|&l| t < l).collect()))
            .collect();
        let fwd = self.run(g, store, &self.fwd, x, batch, &masks, false)?;
        let bwd = self.run(g, store, &self.bwd, x, batch, &masks, true)?;
        let rows: Vec<Var> = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| g.concat_cols(&[f, b]))
            .collect::<std::result::Result<_, _>>()?;
        Ok(g.concat_rows(&rows)?)
    }

    /// Single sequence `[N, T]` with `valid_len` real tokens.
    pub fn encode<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        valid_len: usize,
    ) -> Result<Var> {
        self.encode_batch(g, store, x, &[valid_len])
    }

    #[allow(clippy::too_many_arguments)]
    fn run<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        cell: &LstmCell,
        x: Var,
        batch: usize,
        masks: &[Rc<Vec<bool>>],
        reverse: bool,
    ) -> Result<Vec<Var>> {
        let f = self.hidden;
        let steps = masks.len();
        let zx = g.add_row(g.matmul(x, g.param(store, cell.wx))?, g.param(store, cell.b))?;
        let wh = g.param(store, cell.wh);
        let zero = g.constant(Tensor::zeros(&[batch, f]));
        let (mut h, mut c) = (zero, zero);
        let mut out = vec![zero; steps];
        let order: Vec<usize> = if reverse {
            (0..steps).rev().collect()
        } else {
            (0..steps).collect()
        };
        for t in order {
            let z = g.add(g.slice_rows(zx, t * batch, (t + 1) * batch)?, g.matmul(h, wh)?)?;
            let i = g.sigmoid(g.slice_cols(z, 0, f)?);
            let fg = g.sigmoid(g.slice_cols(z, f, 2 * f)?);
            let o = g.sigmoid(g.slice_cols(z, 2 * f, 3 * f)?);
            let cand = g.tanh(g.slice_cols(z, 3 * f, 4 * f)?);
            let c_new = g.add(g.mul(fg, c)?, g.mul(i, cand)?)?;
            let h_new = g.mul(o, g.tanh(c_new))?;
            let m = &masks[t];
            c = g.where_rows(m.clone(), c_new, c)?;
            h = g.where_rows(m.clone(), h_new, h)?;
            out[t] = g.where_rows(m.clone(), h_new, zero)?;
        }
        Ok(out)
    }
}

/// Embedding rows for `ids`; PAD rows are zero.
pub fn embed_words<T: Element>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    emb: ParamId,
    ids: &[usize],
) -> Result<Var> {
    let table = g.param(store, emb);
    let rows = g.gather_rows(table, Rc::new(ids.to_vec()))?;
    let keep = ids
        .iter()
        .map(|&i| if i == PAD { T::zero() } else { T::one() })
        .collect();
    Ok(g.scale_rows(rows, Rc::new(keep))?)
}

/// Time-major token layout for [`BiLstm::encode_batch`]: sequences are cut
/// or padded to `steps`.
pub fn time_major(seqs: &[&[usize]], steps: usize) -> Vec<usize> {
    let mut ids = Vec::with_capacity(steps * seqs.len());
    for t in 0..steps {
        for s in seqs {
            ids.push(s.get(t).copied().unwrap_or(PAD));
        }
    }
    ids
}
