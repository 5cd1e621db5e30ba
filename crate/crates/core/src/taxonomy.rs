//! Code hierarchy: levels of codes and child→parent belongingness.
//!
//! Levels are numbered from 1 (most general) in every public signature.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Position of a code inside the taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CodeRef {
    pub level: usize,
    pub index: usize,
}

/// On-disk form: `{"levels": [[...], ...], "parent": {child: parent}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyFile {
    pub levels: Vec<Vec<String>>,
    pub parent: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Taxonomy {
    levels: Vec<Vec<String>>,
    /// `parents[l][i]`: index at level `l - 1` (0-based levels here).
    parents: Vec<Vec<Option<usize>>>,
    children: Vec<Vec<Vec<usize>>>,
    lookup: HashMap<String, CodeRef>,
}

impl Taxonomy {
    pub fn from_file(file: TaxonomyFile) -> Result<Self> {
        if file.levels.is_empty() || file.levels.iter().any(Vec::is_empty) {
            return Err(Error::Taxonomy("every level needs at least one code".into()));
        }
        let mut lookup = HashMap::new();
        for (l, codes) in file.levels.iter().enumerate() {
            for (i, code) in codes.iter().enumerate() {
                let at = CodeRef { level: l + 1, index: i };
                if lookup.insert(code.clone(), at).is_some() {
                    return Err(Error::Taxonomy(format!("duplicate code `{code}`")));
                }
            }
        }
        for child in file.parent.keys() {
            if !lookup.contains_key(child) {
                return Err(Error::Taxonomy(format!("parent entry for unknown code `{child}`")));
            }
        }
        let depth = file.levels.len();
        let mut parents = vec![Vec::new(); depth];
        let mut children: Vec<Vec<Vec<usize>>> =
            file.levels.iter().map(|c| vec![Vec::new(); c.len()]).collect();
        parents[0] = vec![None; file.levels[0].len()];
        if let Some(code) = file.levels[0].iter().find(|c| file.parent.contains_key(*c)) {
            return Err(Error::Taxonomy(format!("level-1 code `{code}` has a parent")));
        }
        for l in 1..depth {
            for (i, code) in file.levels[l].iter().enumerate() {
                let p = file
                    .parent
                    .get(code)
                    .ok_or_else(|| Error::Taxonomy(format!("code `{code}` has no parent")))?;
                let pref = lookup
                    .get(p)
                    .ok_or_else(|| Error::Taxonomy(format!("parent `{p}` of `{code}` is unknown")))?;
                if pref.level != l {
                    return Err(Error::Taxonomy(format!(
                        "parent `{p}` of `{code}` is not one level above"
                    )));
                }
                parents[l].push(Some(pref.index));
                children[l - 1][pref.index].push(i);
            }
        }
        Ok(Self {
            levels: file.levels,
            parents,
            children,
            lookup,
        })
    }

    pub fn to_file(&self) -> TaxonomyFile {
        let mut parent = BTreeMap::new();
        for l in 2..=self.depth() {
            for i in 0..self.level_size(l) {
                let p = self.parent(CodeRef { level: l, index: i }).expect("non-root");
                parent.insert(self.code(CodeRef { level: l, index: i }).to_string(), self.code(p).to_string());
            }
        }
        TaxonomyFile {
            levels: self.levels.clone(),
            parent,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("taxonomy serialises")
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn level_size(&self, level: usize) -> usize {
        self.levels[level - 1].len()
    }

    pub fn codes(&self, level: usize) -> &[String] {
        &self.levels[level - 1]
    }

    pub fn code(&self, at: CodeRef) -> &str {
        &self.levels[at.level - 1][at.index]
    }

    pub fn find(&self, code: &str) -> Result<CodeRef> {
        self.lookup
            .get(code)
            .copied()
            .ok_or_else(|| Error::UnknownCode(code.to_string()))
    }

    pub fn parent(&self, at: CodeRef) -> Option<CodeRef> {
        self.parents[at.level - 1][at.index].map(|index| CodeRef {
            level: at.level - 1,
            index,
        })
    }

    pub fn children(&self, at: CodeRef) -> &[usize] {
        &self.children[at.level - 1][at.index]
    }

    /// Ancestor of `at` at `level` (`level <= at.level`).
    pub fn ancestor(&self, at: CodeRef, level: usize) -> Result<CodeRef> {
        let mut cur = at;
        while cur.level > level {
            cur = self.parent(cur).ok_or_else(|| {
                Error::Taxonomy(format!("broken ancestor chain at `{}`", self.code(cur)))
            })?;
        }
        Ok(cur)
    }

    /// Horizontal and vertical neighbour sets of a code.
    ///
    /// Horizontal: every code sharing the parent, the code itself included;
    /// level-1 codes are siblings under a virtual root. Vertical: the parent
    /// and the children, whichever exist.
    pub fn neighbor_sets(&self, at: CodeRef) -> Result<(Vec<usize>, Vec<CodeRef>)> {
        if at.level == 0 || at.level > self.depth() || at.index >= self.level_size(at.level) {
            return Err(Error::UnknownCode(format!("{at:?}")));
        }
        let horizontal = match self.parent(at) {
            Some(p) => self.children(p).to_vec(),
            None => (0..self.level_size(at.level)).collect(),
        };
        let mut vertical: Vec<CodeRef> = self.parent(at).into_iter().collect();
        if at.level < self.depth() {
            vertical.extend(self.children(at).iter().map(|&index| CodeRef {
                level: at.level + 1,
                index,
            }));
        }
        Ok((horizontal, vertical))
    }

    /// Sorted code indices at every level implied by `codes` (upward closure).
    pub fn closure(&self, codes: &[CodeRef]) -> Result<Vec<Vec<usize>>> {
        let mut by_level = vec![Vec::new(); self.depth()];
        for &c in codes {
            let mut cur = Some(c);
            while let Some(x) = cur {
                by_level[x.level - 1].push(x.index);
                cur = self.parent(x);
            }
        }
        for v in &mut by_level {
            v.sort_unstable();
            v.dedup();
        }
        Ok(by_level)
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    /// A: {A1: {A1a, A1b, A1c, A1d}, A2: {A2a}}, B: {B1: {B1a, B1b}}
    pub(crate) fn small() -> Taxonomy {
        let levels = vec![
            vec!["A".into(), "B".into()],
            vec!["A1".into(), "A2".into(), "B1".into()],
            vec![
                "A1a".into(),
                "A1b".into(),
                "A1c".into(),
                "A1d".into(),
                "A2a".into(),
                "B1a".into(),
                "B1b".into(),
            ],
        ];
        let mut parent = BTreeMap::new();
        for (c, p) in [
            ("A1", "A"),
            ("A2", "A"),
            ("B1", "B"),
            ("A1a", "A1"),
            ("A1b", "A1"),
            ("A1c", "A1"),
            ("A1d", "A1"),
            ("A2a", "A2"),
            ("B1a", "B1"),
            ("B1b", "B1"),
        ] {
            parent.insert(c.to_string(), p.to_string());
        }
        Taxonomy::from_file(TaxonomyFile { levels, parent }).unwrap()
    }

    #[test]
    fn level_one_uses_virtual_root() {
        let t = small();
        let (h, v) = t.neighbor_sets(t.find("A").unwrap()).unwrap();
        assert_eq!(h, vec![0, 1]);
        assert_eq!(
            v,
            vec![CodeRef { level: 2, index: 0 }, CodeRef { level: 2, index: 1 }]
        );
    }

    #[test]
    fn leaf_sets() {
        let t = small();
        let (h, v) = t.neighbor_sets(t.find("A1c").unwrap()).unwrap();
        assert_eq!(h, vec![0, 1, 2, 3]);
        assert_eq!(v, vec![t.find("A1").unwrap()]);
    }

    #[test]
    fn only_child_is_its_own_sibling() {
        let t = small();
        let a2a = t.find("A2a").unwrap();
        let (h, v) = t.neighbor_sets(a2a).unwrap();
        assert_eq!(h, vec![a2a.index]);
        assert_eq!(v, vec![t.find("A2").unwrap()]);
        let b1 = t.find("B1").unwrap();
        let (h, v) = t.neighbor_sets(b1).unwrap();
        assert_eq!(h, vec![b1.index]);
        assert_eq!(v, vec![t.find("B").unwrap(), t.find("B1a").unwrap(), t.find("B1b").unwrap()]);
    }

    #[test]
    fn unknown_code_is_lookup_error() {
        let t = small();
        assert!(matches!(t.find("Z9"), Err(Error::UnknownCode(_))));
        assert!(t.neighbor_sets(CodeRef { level: 3, index: 99 }).is_err());
    }

    #[test]
    fn closure_adds_ancestors() {
        let t = small();
        let got = t.closure(&[t.find("B1b").unwrap(), t.find("A1a").unwrap()]).unwrap();
        assert_eq!(got, vec![vec![0, 1], vec![0, 2], vec![0, 6]]);
    }

    #[test]
    fn rejects_missing_parent_and_skipped_levels() {
        let mut f = small().to_file();
        f.parent.remove("A1a");
        assert!(Taxonomy::from_file(f).is_err());
        let mut f = small().to_file();
        f.parent.insert("A1a".into(), "A".into());
        assert!(Taxonomy::from_file(f).is_err());
    }

    #[test]
    fn file_round_trip() {
        let t = small();
        assert_eq!(Taxonomy::parse(&t.to_json()).unwrap(), t);
    }
}
