//! Two-layer perceptron shared by every learned aggregation.

use patclass_tensor::{Element, Graph, ParamId, ParamStore, Var};
use rand_chacha::ChaCha8Rng;

use crate::Result;

/// `relu(x W1 + b1) W2 + b2`, dropout on the hidden layer.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl Mlp {
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
    ) -> Result<Self> {
        Ok(Self {
            w1: store.insert_uniform(format!("{name}.w1"), input, hidden, input, rng)?,
            b1: store.insert_uniform(format!("{name}.b1"), 1, hidden, input, rng)?,
            w2: store.insert_uniform(format!("{name}.w2"), hidden, output, hidden, rng)?,
            b2: store.insert_uniform(format!("{name}.b2"), 1, output, hidden, rng)?,
        })
    }

    pub fn forward<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let h = g.matmul(x, g.param(store, self.w1))?;
        let h = g.relu(g.add_row(h, g.param(store, self.b1))?);
        let h = g.dropout(h, dropout);
        let o = g.matmul(h, g.param(store, self.w2))?;
        Ok(g.add_row(o, g.param(store, self.b2))?)
    }
}
