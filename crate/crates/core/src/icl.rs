//! Taxonomy correlation learning: attention over horizontal and vertical
//! neighbours, per-level fusion and ancestor-chain contextualisation.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use patclass_tensor::{Element, Graph, ParamId, ParamStore, Tensor, Var};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::Mlp;
use crate::taxonomy::{CodeRef, Taxonomy};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IclMode {
    None,
    Fixed,
    AdaptiveH,
    AdaptiveV,
    AdaptiveHv,
}

impl IclMode {
    pub const ALL: [IclMode; 5] = [
        IclMode::None,
        IclMode::Fixed,
        IclMode::AdaptiveH,
        IclMode::AdaptiveV,
        IclMode::AdaptiveHv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            IclMode::None => "none",
            IclMode::Fixed => "fixed",
            IclMode::AdaptiveH => "adaptive_h",
            IclMode::AdaptiveV => "adaptive_v",
            IclMode::AdaptiveHv => "adaptive_hv",
        }
    }

    fn uses_vertical(self) -> bool {
        matches!(self, IclMode::Fixed | IclMode::AdaptiveV | IclMode::AdaptiveHv)
    }

    fn uses_horizontal(self) -> bool {
        matches!(self, IclMode::AdaptiveH | IclMode::AdaptiveHv)
    }
}

impl fmt::Display for IclMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for IclMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown icl mode `{s}`")))
    }
}

/// Attention neighbourhood of every code at one level: which rows of a
/// candidate matrix each code may attend to.
#[derive(Clone, Debug)]
pub struct Neighborhood {
    /// Levels stacked (in order) to form the candidate matrix.
    pub levels: Vec<usize>,
    /// Row-major `[codes, candidates]` membership.
    pub keep: Vec<bool>,
    pub candidates: usize,
}

impl Neighborhood {
    pub fn horizontal(tax: &Taxonomy, level: usize) -> Result<Self> {
        Self::siblings(tax, level, true)
    }

    /// Sibling sets with or without the code itself. Only children keep
    /// themselves either way so no set is empty.
    pub fn siblings(tax: &Taxonomy, level: usize, include_self: bool) -> Result<Self> {
        let n = tax.level_size(level);
        let mut keep = vec![false; n * n];
        for i in 0..n {
            let (h, _) = tax.neighbor_sets(CodeRef { level, index: i })?;
            let alone = h.len() == 1;
            for j in h {
                keep[i * n + j] = include_self || alone || j != i;
            }
        }
        Ok(Self {
            levels: vec![level],
            keep,
            candidates: n,
        })
    }

    /// `None` when the taxonomy has a single level.
    pub fn vertical(tax: &Taxonomy, level: usize) -> Result<Option<Self>> {
        let levels: Vec<usize> = [level.checked_sub(1), Some(level + 1)]
            .into_iter()
            .flatten()
            .filter(|&l| l >= 1 && l <= tax.depth())
            .collect();
        if levels.is_empty() {
            return Ok(None);
        }
        let offsets: Vec<usize> = levels
            .iter()
            .scan(0, |acc, &l| {
                let o = *acc;
                *acc += tax.level_size(l);
                Some(o)
            })
            .collect();
        let candidates: usize = levels.iter().map(|&l| tax.level_size(l)).sum();
        let n = tax.level_size(level);
        let mut keep = vec![false; n * candidates];
        for i in 0..n {
            let (_, v) = tax.neighbor_sets(CodeRef { level, index: i })?;
            for c in v {
                let k = levels.iter().position(|&l| l == c.level).expect("level listed");
                keep[i * candidates + offsets[k] + c.index] = true;
            }
        }
        Ok(Some(Self {
            levels,
            keep,
            candidates,
        }))
    }

    /// Row-normalised membership: the weights of uniform aggregation.
    pub fn uniform_weights<T: Element>(&self) -> Tensor<T> {
        let rows = self.keep.len() / self.candidates;
        let mut data = vec![T::zero(); self.keep.len()];
        for r in 0..rows {
            let row = &self.keep[r * self.candidates..(r + 1) * self.candidates];
            let n = row.iter().filter(|&&k| k).count();
            for (j, &k) in row.iter().enumerate() {
                if k {
                    data[r * self.candidates + j] = T::num(1.0 / n as f64);
                }
            }
        }
        Tensor::new(vec![rows, self.candidates], data).expect("sized from keep")
    }
}

/// Attention of each row of `query` over the kept rows of `cand`. Returns
/// `(weights, message)`.
pub fn adaptive_propagate<T: Element>(
    g: &Graph<T>,
    query: Var,
    cand: Var,
    keep: &[bool],
) -> Result<(Var, Var)> {
    let logits = g.matmul_nt(query, cand)?;
    let w = g.masked_softmax_rows(logits, keep)?;
    let msg = g.matmul(w, cand)?;
    Ok((w, msg))
}

/// `MLP(v ‖ h)`.
pub fn fuse_hv<T: Element>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    mlp: &Mlp,
    h_msg: Var,
    v_msg: Var,
    dropout: f64,
) -> Result<Var> {
    let x = g.concat_cols(&[v_msg, h_msg])?;
    mlp.forward(g, store, x, dropout)
}

/// `g_q(H_1[anc] ‖ … ‖ H_q)` for every code at `level`.
pub fn contextualize<T: Element>(
    g: &Graph<T>,
    store: &ParamStore<T>,
    tax: &Taxonomy,
    msgs: &[Var],
    level: usize,
    mlp: &Mlp,
    dropout: f64,
) -> Result<Var> {
    if msgs.len() < level {
        return Err(Error::Contract(format!(
            "contextualize at level {level} needs {level} message levels, got {}",
            msgs.len()
        )));
    }
    let n = tax.level_size(level);
    let mut parts = Vec::with_capacity(level);
    for (l, &m) in msgs.iter().enumerate().take(level - 1) {
        let idx = (0..n)
            .map(|i| Ok(tax.ancestor(CodeRef { level, index: i }, l + 1)?.index))
            .collect::<Result<Vec<_>>>()?;
        parts.push(g.gather_rows(m, Rc::new(idx))?);
    }
    parts.push(msgs[level - 1]);
    let x = g.concat_cols(&parts)?;
    mlp.forward(g, store, x, dropout)
}

/// Parameters and precomputed neighbourhoods of the module for one target
/// level.
#[derive(Clone, Debug)]
pub struct Icl {
    pub mode: IclMode,
    pub level: usize,
    /// `E^1 ..`, as many levels as the mode touches.
    pub emb: Vec<ParamId>,
    /// Fusion MLP per level `1..=level`; absent in fixed mode.
    pub fuse: Vec<Mlp>,
    pub context: Mlp,
    horizontal: Vec<Neighborhood>,
    vertical: Vec<Option<Neighborhood>>,
}

impl Icl {
    /// Drops each code from its own sibling set.
    pub fn exclude_self(&mut self, tax: &Taxonomy) -> Result<()> {
        for (i, h) in self.horizontal.iter_mut().enumerate() {
            *h = Neighborhood::siblings(tax, i + 1, false)?;
        }
        Ok(())
    }

    /// `None` for [`IclMode::None`].
    pub fn register<T: Element>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        tax: &Taxonomy,
        mode: IclMode,
        level: usize,
        width: usize,
    ) -> Result<Option<Self>> {
        if mode == IclMode::None {
            return Ok(None);
        }
        let top = if mode.uses_vertical() {
            (level + 1).min(tax.depth())
        } else {
            level
        };
        let emb = (1..=top)
            .map(|l| Ok(store.insert_uniform(format!("icl.e{l}"), tax.level_size(l), width, width, rng)?))
            .collect::<Result<Vec<_>>>()?;
        let fuse = if mode == IclMode::Fixed {
            Vec::new()
        } else {
            (1..=level)
                .map(|l| Mlp::register(store, rng, &format!("icl.fuse{l}"), 2 * width, width, width))
                .collect::<Result<Vec<_>>>()?
        };
        let context = Mlp::register(store, rng, &format!("icl.g{level}"), level * width, width, width)?;
        let horizontal = (1..=level)
            .map(|l| Neighborhood::horizontal(tax, l))
            .collect::<Result<_>>()?;
        let vertical = (1..=level)
            .map(|l| Neighborhood::vertical(tax, l))
            .collect::<Result<_>>()?;
        Ok(Some(Self {
            mode,
            level,
            emb,
            fuse,
            context,
            horizontal,
            vertical,
        }))
    }

    /// Propagated message `H^MP_l` for each level `1..=level`.
    pub fn messages<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        dropout: f64,
    ) -> Result<Vec<Var>> {
        let e: Vec<Var> = self.emb.iter().map(|&id| g.param(store, id)).collect();
        let mut out = Vec::with_capacity(self.level);
        for l in 1..=self.level {
            let own = e[l - 1];
            let v_msg = match (&self.vertical[l - 1], self.mode.uses_vertical()) {
                (Some(nb), true) => {
                    let parts: Vec<Var> = nb.levels.iter().map(|&k| e[k - 1]).collect();
                    let cand = g.concat_rows(&parts)?;
                    if self.mode == IclMode::Fixed {
                        let w = g.constant(nb.uniform_weights());
                        g.matmul(w, cand)?
                    } else {
                        adaptive_propagate(g, own, cand, &nb.keep)?.1
                    }
                }
                _ => own,
            };
            if self.mode == IclMode::Fixed {
                out.push(v_msg);
                continue;
            }
            let h_msg = if self.mode.uses_horizontal() {
                adaptive_propagate(g, own, own, &self.horizontal[l - 1].keep)?.1
            } else {
                own
            };
            out.push(fuse_hv(g, store, &self.fuse[l - 1], h_msg, v_msg, dropout)?);
        }
        Ok(out)
    }

    /// Hierarchical code representations `H^P` at the target level.
    pub fn forward<T: Element>(
        &self,
        g: &Graph<T>,
        store: &ParamStore<T>,
        tax: &Taxonomy,
        dropout: f64,
    ) -> Result<Var> {
        let msgs = self.messages(g, store, dropout)?;
        contextualize(g, store, tax, &msgs, self.level, &self.context, dropout)
    }

    /// Code embedding table for `level`, if registered.
    pub fn embedding(&self, level: usize) -> Option<ParamId> {
        self.emb.get(level.checked_sub(1)?).copied()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::taxonomy::tests::small;

    #[test]
    fn two_sibling_example() {
        let g: Graph<f64> = Graph::new();
        let e = g.constant(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let (w, m) = adaptive_propagate(&g, e, e, &[true; 4]).unwrap();
        let m = g.value(m);
        assert!((m.get(0, 0) - 0.731_058_578_6).abs() < 1e-9);
        assert!((m.get(0, 1) - 0.268_941_421_4).abs() < 1e-9);
        let w = g.value(w);
        assert!((w.row_slice(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn singleton_set_returns_self() {
        let g: Graph<f64> = Graph::new();
        let e = g.constant(Tensor::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]));
        let (_, m) = adaptive_propagate(&g, e, e, &[true, false, false, true]).unwrap();
        assert_eq!(g.value(m).data(), g.value(e).data());
    }

    #[test]
    fn sibling_sets_without_self() {
        let tax = small();
        let n = tax.level_size(3);
        let h = Neighborhood::siblings(&tax, 3, false).unwrap();
        let with = Neighborhood::horizontal(&tax, 3).unwrap();
        for i in 0..n {
            let row = &h.keep[i * n..(i + 1) * n];
            let alone = with.keep[i * n..(i + 1) * n].iter().filter(|&&k| k).count() == 1;
            assert_eq!(row[i], alone);
            assert!(row.iter().any(|&k| k));
        }
    }

    #[test]
    fn neighbourhood_masks() {
        let tax = small();
        let h1 = Neighborhood::horizontal(&tax, 1).unwrap();
        assert!(h1.keep.iter().all(|&k| k));
        let v1 = Neighborhood::vertical(&tax, 1).unwrap().unwrap();
        assert_eq!(v1.levels, vec![2]);
        let v3 = Neighborhood::vertical(&tax, 3).unwrap().unwrap();
        assert_eq!(v3.levels, vec![2]);
        let v2 = Neighborhood::vertical(&tax, 2).unwrap().unwrap();
        assert_eq!(v2.levels, vec![1, 3]);
        let w = v3.uniform_weights::<f64>();
        for r in 0..w.rows() {
            assert!((w.row_slice(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_fuse_weights_give_zero() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store: ParamStore<f64> = ParamStore::new();
        let mlp = Mlp::register(&mut store, &mut rng, "f", 4, 2, 2).unwrap();
        for p in store.iter_mut() {
            p.value.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
        let g = Graph::new();
        let h = g.constant(Tensor::full(&[3, 2], 1.5));
        let out = fuse_hv(&g, &store, &mlp, h, h, 0.0).unwrap();
        assert_eq!(g.shape(out), vec![3, 2]);
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn mode_parsing() {
        for m in IclMode::ALL {
            assert_eq!(m.as_str().parse::<IclMode>().unwrap(), m);
        }
        assert!("both".parse::<IclMode>().is_err());
    }
}
