//! Label attention over word positions, the two-path decoder and the loss.

use patclass_tensor::{Element, Graph, ParamStore, Reduction, Tensor, Var};
use rand_chacha::ChaCha8Rng;

use crate::nn::Mlp;
use crate::{Error, Result};

/// Per-code attention over the first `valid_len` rows of `v`. Returns
/// `(weights [codes, N], summary [codes, 2F])`.
pub fn label_attention_weights<T: Element>(
    g: &Graph<T>,
    h_codes: Var,
    v: Var,
    valid_len: usize,
) -> Result<(Var, Var)> {
    if valid_len == 0 {
        return Err(Error::Contract("label attention over a text with no valid words".into()));
    }
    let logits = g.matmul_nt(h_codes, v)?;
    let (codes, n) = (g.shape(logits)[0], g.shape(logits)[1]);
    let keep: Vec<bool> = (0..codes * n).map(|k| k % n < valid_len).collect();
    let w = g.masked_softmax_rows(logits, &keep)?;
    let out = g.matmul(w, v)?;
    Ok((w, out))
}

pub fn label_attention<T: Element>(
    g: &Graph<T>,
    h_codes: Var,
    v: Var,
    valid_len: usize,
) -> Result<Var> {
    Ok(label_attention_weights(g, h_codes, v, valid_len)?.1)
}

/// `g_T` scores each code row of `M_T`; `g_B` maps the behaviour vector to
/// one logit per code.
#[derive(Clone, Copy, Debug)]
pub struct Decoder {
    pub text: Mlp,
    pub behavior: Mlp,
    pub codes: usize,
}

impl Decoder {
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        hidden: usize,
        codes: usize,
    ) -> Result<Self> {
        Ok(Self {
            text: Mlp::register(store, rng, "decoder.text", 4 * hidden, 2 * hidden, 1)?,
            behavior: Mlp::register(store, rng, "decoder.behavior", 2 * hidden, 2 * hidden, codes)?,
            codes,
        })
    }

    /// Logits `[B, codes]` from `m_t` (`[B * codes, 4F]`, patent-major) and
    /// `m_b` (`[B, 2F]`).
    pub fn logits<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        m_t: Var,
        m_b: Var,
        dropout: f64,
    ) -> Result<Var> {
        let batch = g.shape(m_b)[0];
        let t = self.text.forward(g, store, m_t, dropout)?;
        let t = g.reshape(t, &[batch, self.codes])?;
        let b = self.behavior.forward(g, store, m_b, dropout)?;
        Ok(g.add(t, b)?)
    }

    pub fn predict<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        m_t: Var,
        m_b: Var,
        dropout: f64,
    ) -> Result<Var> {
        Ok(g.sigmoid(self.logits(g, store, m_t, m_b, dropout)?))
    }
}

/// Multi-hot `[B, codes]` target matrix.
pub fn targets<T: Element>(labels: &[&[usize]], codes: usize) -> Tensor<T> {
    let mut t = Tensor::zeros(&[labels.len(), codes]);
    for (b, ls) in labels.iter().enumerate() {
        for &c in *ls {
            t.data_mut()[b * codes + c] = T::one();
        }
    }
    t
}

pub fn bce_loss<T: Element>(
    g: &Graph<T>,
    probs: Var,
    targets: &Tensor<T>,
    reduction: Reduction,
) -> Result<Var> {
    Ok(g.bce(probs, targets, reduction)?)
}
