//! Planted-structure synthetic corpora.
//!
//! Every leaf code owns a word distribution and every assignee a small set
//! of preferred codes. A patent repeats its assignee's previous codes with
//! probability `rho`; each of its words comes from its codes' distributions
//! with probability `tau` and is uniform noise otherwise.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusSplit, PatentRecord};
use crate::taxonomy::{CodeRef, Taxonomy, TaxonomyFile};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Code count per level; each must divide the next.
    pub level_sizes: Vec<usize>,
    pub vocab_size: usize,
    pub words_per_patent: usize,
    /// Support size of each leaf code's word distribution.
    pub words_per_code: usize,
    /// Fraction of a code's topic words inherited from its ancestors.
    pub ancestor_share: f64,
    pub assignees: usize,
    pub patents_per_assignee: usize,
    pub valid_per_assignee: usize,
    pub test_per_assignee: usize,
    pub preferred_codes: usize,
    pub max_labels: usize,
    /// History signal strength.
    pub rho: f64,
    /// Text signal strength.
    pub tau: f64,
    /// Draw preferred codes and patent labels among siblings of one parent.
    pub sibling_clustered: bool,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            level_sizes: vec![4, 12, 36],
            vocab_size: 400,
            words_per_patent: 20,
            words_per_code: 8,
            ancestor_share: 0.0,
            assignees: 20,
            patents_per_assignee: 12,
            valid_per_assignee: 1,
            test_per_assignee: 1,
            preferred_codes: 4,
            max_labels: 3,
            rho: 0.5,
            tau: 0.9,
            sibling_clustered: false,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.level_sizes.is_empty() || self.level_sizes.contains(&0) {
            return bad("level_sizes must be nonempty and positive".into());
        }
        for w in self.level_sizes.windows(2) {
            if w[1] % w[0] != 0 || w[1] < w[0] {
                return bad(format!("level size {} does not divide {}", w[0], w[1]));
            }
        }
        if !(0.0..=1.0).contains(&self.rho) || !(0.0..=1.0).contains(&self.tau) {
            return bad("rho and tau must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.ancestor_share) {
            return bad("ancestor_share must lie in [0, 1]".into());
        }
        if self.vocab_size == 0 || self.words_per_patent == 0 || self.words_per_code == 0 {
            return bad("vocab_size, words_per_patent and words_per_code must be positive".into());
        }
        if self.words_per_code > self.vocab_size {
            return bad("words_per_code exceeds vocab_size".into());
        }
        if self.max_labels == 0 || self.preferred_codes == 0 {
            return bad("max_labels and preferred_codes must be positive".into());
        }
        if self.valid_per_assignee + self.test_per_assignee >= self.patents_per_assignee {
            return bad("every assignee needs at least one training patent".into());
        }
        Ok(())
    }

    /// Flat `key=value` text, same syntax as model config files.
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: "synth spec".into(),
                line: n + 1,
                message: format!("expected key=value, got `{line}`"),
            })?;
            let (k, v) = (k.trim(), v.trim());
            let perr = |e: String| Error::Parse {
                file: "synth spec".into(),
                line: n + 1,
                message: format!("{k}: {e}"),
            };
            macro_rules! num {
                () => {
                    v.parse().map_err(|e: std::num::ParseIntError| perr(e.to_string()))?
                };
            }
            macro_rules! real {
                () => {
                    v.parse().map_err(|e: std::num::ParseFloatError| perr(e.to_string()))?
                };
            }
            match k {
                "level_sizes" => {
                    spec.level_sizes = v
                        .split(',')
                        .map(|s| s.trim().parse().map_err(|e: std::num::ParseIntError| perr(e.to_string())))
                        .collect::<Result<_>>()?
                }
                "vocab_size" => spec.vocab_size = num!(),
                "words_per_patent" => spec.words_per_patent = num!(),
                "words_per_code" => spec.words_per_code = num!(),
                "ancestor_share" => spec.ancestor_share = real!(),
                "assignees" => spec.assignees = num!(),
                "patents_per_assignee" => spec.patents_per_assignee = num!(),
                "valid_per_assignee" => spec.valid_per_assignee = num!(),
                "test_per_assignee" => spec.test_per_assignee = num!(),
                "preferred_codes" => spec.preferred_codes = num!(),
                "max_labels" => spec.max_labels = num!(),
                "rho" => spec.rho = real!(),
                "tau" => spec.tau = real!(),
                "sibling_clustered" => {
                    spec.sibling_clustered = v.parse().map_err(|e: std::str::ParseBoolError| perr(e.to_string()))?
                }
                other => return Err(perr(format!("unknown key `{other}`"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn code_name(level: usize, index_in_parent: usize, parent: Option<&str>) -> String {
    match parent {
        None => {
            if index_in_parent < 26 {
                ((b'A' + index_in_parent as u8) as char).to_string()
            } else {
                format!("S{index_in_parent}")
            }
        }
        Some(p) if level.is_multiple_of(2) => format!("{p}{:02}", index_in_parent + 1),
        Some(p) => {
            if index_in_parent < 26 {
                format!("{p}{}", (b'A' + index_in_parent as u8) as char)
            } else {
                format!("{p}Z{index_in_parent}")
            }
        }
    }
}

pub fn synthetic_taxonomy(level_sizes: &[usize]) -> Result<Taxonomy> {
    let mut levels: Vec<Vec<String>> = Vec::new();
    let mut parent = BTreeMap::new();
    for (l, &size) in level_sizes.iter().enumerate() {
        let mut codes = Vec::with_capacity(size);
        if l == 0 {
            codes.extend((0..size).map(|i| code_name(1, i, None)));
        } else {
            let per = size / level_sizes[l - 1];
            for (pi, p) in levels[l - 1].iter().enumerate() {
                for j in 0..per {
                    let c = code_name(l + 1, j, Some(p));
                    parent.insert(c.clone(), p.clone());
                    codes.push(c);
                }
                debug_assert_eq!(codes.len(), (pi + 1) * per);
            }
        }
        levels.push(codes);
    }
    Taxonomy::from_file(TaxonomyFile { levels, parent })
}

/// Builds a taxonomy and a temporally split corpus, deterministic in `seed`.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<(Taxonomy, CorpusSplit)> {
    spec.validate()?;
    let tax = synthetic_taxonomy(&spec.level_sizes)?;
    let depth = tax.depth();
    let n_leaf = tax.level_size(depth);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vocab: Vec<String> = (0..spec.vocab_size).map(|i| format!("w{i:04}")).collect();

    // Topic words for every code at every level; a leaf's distribution mixes
    // its own words with a share inherited from its ancestors.
    let mut topics: Vec<Vec<Vec<usize>>> = Vec::with_capacity(depth);
    for l in 1..=depth {
        topics.push(
            (0..tax.level_size(l))
                .map(|_| rand::seq::index::sample(&mut rng, spec.vocab_size, spec.words_per_code).into_vec())
                .collect(),
        );
    }
    let leaf_words: Vec<Vec<usize>> = (0..n_leaf)
        .map(|i| {
            let leaf = CodeRef { level: depth, index: i };
            let inherited = (spec.words_per_code as f64 * spec.ancestor_share).round() as usize;
            let mut words: Vec<usize> = topics[depth - 1][i][..spec.words_per_code - inherited].to_vec();
            for k in 0..inherited {
                let level = 1 + k % depth.saturating_sub(1).max(1);
                let anc = tax.ancestor(leaf, level.min(depth)).expect("complete chain");
                words.push(topics[anc.level - 1][anc.index][k % spec.words_per_code]);
            }
            words
        })
        .collect();

    let siblings_of = |leaf: usize| -> Vec<usize> {
        match tax.parent(CodeRef { level: depth, index: leaf }) {
            Some(p) => tax.children(p).to_vec(),
            None => (0..n_leaf).collect(),
        }
    };

    let mut split = CorpusSplit::default();
    for a in 0..spec.assignees {
        let preferred: Vec<usize> = if spec.sibling_clustered {
            let anchor = rng.random_range(0..n_leaf);
            let mut sib = siblings_of(anchor);
            sib.shuffle(&mut rng);
            sib.truncate(spec.preferred_codes);
            sib
        } else {
            rand::seq::index::sample(&mut rng, n_leaf, spec.preferred_codes.min(n_leaf)).into_vec()
        };
        let mut prev: Option<Vec<usize>> = None;
        let mut time: i64 = rng.random_range(0..5);
        let n = spec.patents_per_assignee;
        for p in 0..n {
            let codes = match &prev {
                Some(c) if rng.random::<f64>() < spec.rho => c.clone(),
                _ => {
                    let k = rng.random_range(1..=spec.max_labels.min(preferred.len()));
                    let mut c: Vec<usize> = preferred.choose_multiple(&mut rng, k).copied().collect();
                    c.sort_unstable();
                    c
                }
            };
            let words: Vec<String> = (0..spec.words_per_patent)
                .map(|_| {
                    let id = if rng.random::<f64>() < spec.tau {
                        let code = *codes.choose(&mut rng).expect("nonempty labels");
                        *leaf_words[code].choose(&mut rng).expect("nonempty topic")
                    } else {
                        rng.random_range(0..spec.vocab_size)
                    };
                    vocab[id].clone()
                })
                .collect();
            let refs: Vec<CodeRef> = codes.iter().map(|&index| CodeRef { level: depth, index }).collect();
            let record = PatentRecord {
                id: format!("u{a:03}-p{p:03}"),
                assignee: format!("u{a:03}"),
                time,
                words,
                labels: tax.closure(&refs)?,
            };
            let test_start = n - spec.test_per_assignee;
            let valid_start = test_start - spec.valid_per_assignee;
            if p >= test_start {
                split.test.push(record);
            } else if p >= valid_start {
                split.valid.push(record);
            } else {
                split.train.push(record);
            }
            time += 1 + rng.random_range(0..3);
            prev = Some(codes);
        }
    }
    Ok((tax, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_taxonomy_shape() {
        let t = synthetic_taxonomy(&[4, 12, 36]).unwrap();
        assert_eq!((t.level_size(1), t.level_size(2), t.level_size(3)), (4, 12, 36));
        assert_eq!(t.codes(3)[0], "A01A");
    }

    #[test]
    fn indivisible_branching_is_config_error() {
        let spec = SynthSpec {
            level_sizes: vec![4, 10, 30],
            ..Default::default()
        };
        assert!(matches!(generate_synthetic(&spec, 1), Err(Error::Config(_))));
    }

    #[test]
    fn pure_history_copies_codes() {
        let spec = SynthSpec {
            rho: 1.0,
            tau: 0.0,
            ..Default::default()
        };
        let (_, split) = generate_synthetic(&spec, 3).unwrap();
        let mut all: Vec<&PatentRecord> = split.train.iter().chain(&split.valid).chain(&split.test).collect();
        all.sort_by(|a, b| a.assignee.cmp(&b.assignee).then(a.time.cmp(&b.time)));
        for w in all.windows(2) {
            if w[0].assignee == w[1].assignee {
                assert_eq!(w[0].labels, w[1].labels);
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SynthSpec::default();
        let (ta, a) = generate_synthetic(&spec, 9).unwrap();
        let (tb, b) = generate_synthetic(&spec, 9).unwrap();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        a.write_dir(dir_a.path(), &ta).unwrap();
        b.write_dir(dir_b.path(), &tb).unwrap();
        for f in ["train.jsonl", "valid.jsonl", "test.jsonl", "taxonomy.json"] {
            assert_eq!(
                std::fs::read(dir_a.path().join(f)).unwrap(),
                std::fs::read(dir_b.path().join(f)).unwrap()
            );
        }
        let (_, c) = generate_synthetic(&spec, 10).unwrap();
        assert_ne!(a, c);
    }

    /// Monte-Carlo check of the generator's repetition rate.
    #[test]
    fn rho_controls_consecutive_overlap() {
        let spec = SynthSpec {
            rho: 0.8,
            assignees: 500,
            patents_per_assignee: 22,
            words_per_patent: 1,
            ..Default::default()
        };
        let (_, split) = generate_synthetic(&spec, 5).unwrap();
        let mut all: Vec<&PatentRecord> = split.train.iter().chain(&split.valid).chain(&split.test).collect();
        all.sort_by(|a, b| a.assignee.cmp(&b.assignee).then(a.time.cmp(&b.time)));
        let (mut pairs, mut shared) = (0usize, 0usize);
        for w in all.windows(2) {
            if w[0].assignee == w[1].assignee {
                pairs += 1;
                if w[0].labels[2].iter().any(|c| w[1].labels[2].contains(c)) {
                    shared += 1;
                }
            }
        }
        assert!(pairs >= 10_000, "{pairs}");
        let rate = shared as f64 / pairs as f64;
        assert!(rate >= 0.7, "{rate}");
    }

    #[test]
    fn spec_file_parses() {
        let s = SynthSpec::parse("rho=0.9\ntau = 0.2 # weak text\nlevel_sizes=2,4,8\nsibling_clustered=true\n").unwrap();
        assert_eq!(s.level_sizes, vec![2, 4, 8]);
        assert!(s.sibling_clustered);
        assert!((s.rho - 0.9).abs() < 1e-12);
        assert!(SynthSpec::parse("rho=2").is_err());
        assert!(SynthSpec::parse("bogus=1").is_err());
    }
}
