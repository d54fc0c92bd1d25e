//! Sentence matrices: one column per carved block, one row per mnemonic.

use serde::{Deserialize, Serialize};

use crate::isa::{Opcode, WEIGHTED_MNEMONICS};
use crate::label::ClassLabel;
use crate::tracer::BlockRecord;

pub const DEFAULT_MAX_S: usize = 4096;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    /// Row order; every entry must be one of the weighted mnemonics.
    pub mnemonics: Vec<Opcode>,
    /// Columns beyond this are dropped.
    pub max_s: usize,
    /// Treat every entropy score as zero.
    pub no_entropy: bool,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mnemonics: WEIGHTED_MNEMONICS.to_vec(),
            max_s: DEFAULT_MAX_S,
            no_entropy: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("trace has no blocks")]
    EmptyTrace,
    #[error("max_s must be positive")]
    ZeroMaxS,
    #[error("`{0}` is not a weighted mnemonic")]
    NotWeighted(Opcode),
    #[error("requested {requested} mnemonics but only {available} are weighted")]
    TooManyMnemonics { requested: usize, available: usize },
    #[error("empty corpus")]
    EmptyCorpus,
}

/// A `d x s` row-major matrix with non-negative finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceMatrix {
    pub d: usize,
    pub s: usize,
    pub values: Vec<f64>,
    pub label: Option<ClassLabel>,
    /// Set when the block sequence was longer than `max_s`.
    pub truncated: bool,
}

impl SentenceMatrix {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.s + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.s..(row + 1) * self.s]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.d).map(|r| self.get(r, col)).collect()
    }
}

/// Entry `(i, j) = count of mnemonic i in block j * (1 + entropy_j)`.
pub fn build_sentence_matrix(blocks: &[BlockRecord], cfg: &FeatureConfig) -> Result<SentenceMatrix, FeatureError> {
    if blocks.is_empty() {
        return Err(FeatureError::EmptyTrace);
    }
    if cfg.max_s == 0 {
        return Err(FeatureError::ZeroMaxS);
    }
    let rows: Vec<usize> = cfg
        .mnemonics
        .iter()
        .map(|&m| m.weighted_index().ok_or(FeatureError::NotWeighted(m)))
        .collect::<Result<_, _>>()?;
    let d = rows.len();
    let s = blocks.len().min(cfg.max_s);
    let mut values = vec![0.0; d * s];
    for (j, b) in blocks[..s].iter().enumerate() {
        let h = if cfg.no_entropy { 0.0 } else { b.entropy_score };
        let mult = 1.0 + if h.is_finite() { h.max(0.0) } else { 0.0 };
        for (i, &src) in rows.iter().enumerate() {
            values[i * s + j] = b.mnemonic_counts[src] as f64 * mult;
        }
    }
    Ok(SentenceMatrix {
        d,
        s,
        values,
        label: None,
        truncated: blocks.len() > s,
    })
}

/// The `d` weighted mnemonics executed most often across the corpus, ties
/// going to the lower opcode enumeration index.
pub fn select_mnemonics<'a, I>(corpus: I, d: usize) -> Result<Vec<Opcode>, FeatureError>
where
    I: IntoIterator<Item = &'a [BlockRecord]>,
{
    if d > WEIGHTED_MNEMONICS.len() {
        return Err(FeatureError::TooManyMnemonics {
            requested: d,
            available: WEIGHTED_MNEMONICS.len(),
        });
    }
    let mut totals = [0u64; 12];
    let mut any = false;
    for blocks in corpus {
        any = true;
        for b in blocks {
            for (t, c) in totals.iter_mut().zip(b.mnemonic_counts) {
                *t += c;
            }
        }
    }
    if !any {
        return Err(FeatureError::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..WEIGHTED_MNEMONICS.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(totals[i]), WEIGHTED_MNEMONICS[i].enum_index()));
    Ok(order[..d].iter().map(|&i| WEIGHTED_MNEMONICS[i]).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block(counts: [u64; 12], h: f64) -> BlockRecord {
        BlockRecord {
            head_addr: 0,
            tail_addr: 0,
            mnemonic_counts: counts,
            length: counts.iter().sum::<u64>() as usize,
            entropy_score: h,
            loop_iters: 1,
        }
    }

    fn xor_add() -> [u64; 12] {
        let mut c = [0; 12];
        c[0] = 1; // add
        c[8] = 2; // xor
        c
    }

    #[test]
    fn single_block_counts() {
        let m = build_sentence_matrix(&[block(xor_add(), 0.0)], &FeatureConfig::default()).unwrap();
        assert_eq!((m.d, m.s), (12, 1));
        let mut want = vec![0.0; 12];
        want[0] = 1.0;
        want[8] = 2.0;
        assert_eq!(m.column(0), want);
    }

    #[test]
    fn entropy_scales_column() {
        let m = build_sentence_matrix(&[block(xor_add(), 3.0)], &FeatureConfig::default()).unwrap();
        assert_eq!(m.get(0, 0), 4.0);
        assert_eq!(m.get(8, 0), 8.0);
        let cfg = FeatureConfig {
            no_entropy: true,
            ..Default::default()
        };
        let m = build_sentence_matrix(&[block(xor_add(), 3.0)], &cfg).unwrap();
        assert_eq!(m.get(8, 0), 2.0);
    }

    #[test]
    fn shape_and_truncation() {
        let blocks: Vec<_> = (0..128).map(|i| block(xor_add(), i as f64 / 64.0)).collect();
        let m = build_sentence_matrix(&blocks, &FeatureConfig::default()).unwrap();
        assert_eq!((m.d, m.s, m.truncated), (12, 128, false));
        let cfg = FeatureConfig {
            max_s: 100,
            ..Default::default()
        };
        let m = build_sentence_matrix(&blocks, &cfg).unwrap();
        assert_eq!((m.s, m.truncated), (100, true));
        assert_eq!(build_sentence_matrix(&[], &cfg), Err(FeatureError::EmptyTrace));
    }

    #[test]
    fn mnemonic_selection() {
        let mut xor_only = [0; 12];
        xor_only[8] = 5;
        let corpus = [block(xor_only, 0.0)];
        let sel = select_mnemonics(corpus.chunks(1), 1).unwrap();
        assert_eq!(sel, vec![Opcode::Xor]);
        // Everything else ties at zero and falls back to enumeration order.
        let sel = select_mnemonics(corpus.chunks(1), 3).unwrap();
        assert_eq!(sel, vec![Opcode::Xor, Opcode::Add, Opcode::Sub]);
        let all = select_mnemonics(corpus.chunks(1), 12).unwrap();
        assert_eq!(all.len(), 12);
        assert!(matches!(
            select_mnemonics(corpus.chunks(1), 13),
            Err(FeatureError::TooManyMnemonics { .. })
        ));
        let cfg = FeatureConfig {
            mnemonics: sel,
            ..Default::default()
        };
        let m = build_sentence_matrix(&corpus, &cfg).unwrap();
        assert_eq!(m.column(0), vec![5.0, 0.0, 0.0]);
        let bad = FeatureConfig {
            mnemonics: vec![Opcode::Mov],
            ..Default::default()
        };
        assert_eq!(
            build_sentence_matrix(&corpus, &bad),
            Err(FeatureError::NotWeighted(Opcode::Mov))
        );
    }

    fn arb_blocks() -> impl Strategy<Value = Vec<BlockRecord>> {
        prop::collection::vec((prop::array::uniform12(0u64..50), 0.0f64..8.0), 1..20)
            .prop_map(|v| v.into_iter().map(|(c, h)| block(c, h)).collect())
    }

    proptest! {
        #[test]
        fn entries_are_finite_and_non_negative(blocks in arb_blocks()) {
            let m = build_sentence_matrix(&blocks, &FeatureConfig::default()).unwrap();
            prop_assert!(m.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        }

        #[test]
        fn raising_entropy_never_lowers_a_column(blocks in arb_blocks(), j in 0usize..20, dh in 0.0f64..5.0) {
            let j = j % blocks.len();
            let a = build_sentence_matrix(&blocks, &FeatureConfig::default()).unwrap();
            let mut more = blocks.clone();
            more[j].entropy_score += dh;
            let b = build_sentence_matrix(&more, &FeatureConfig::default()).unwrap();
            for i in 0..12 {
                prop_assert!(b.get(i, j) >= a.get(i, j));
            }
        }

        #[test]
        fn zero_entropy_gives_raw_counts(blocks in arb_blocks()) {
            let zeroed: Vec<_> = blocks.iter().map(|b| block(b.mnemonic_counts, 0.0)).collect();
            let m = build_sentence_matrix(&zeroed, &FeatureConfig::default()).unwrap();
            for (j, b) in blocks.iter().enumerate() {
                for i in 0..12 {
                    prop_assert_eq!(m.get(i, j), b.mnemonic_counts[i] as f64);
                }
            }
            let cfg = FeatureConfig { no_entropy: true, ..Default::default() };
            prop_assert_eq!(build_sentence_matrix(&blocks, &cfg).unwrap().values, m.values);
        }

        #[test]
        fn swapping_blocks_swaps_columns(blocks in arb_blocks(), a in 0usize..20, b in 0usize..20) {
            let (a, b) = (a % blocks.len(), b % blocks.len());
            let m = build_sentence_matrix(&blocks, &FeatureConfig::default()).unwrap();
            let mut sw = blocks.clone();
            sw.swap(a, b);
            let n = build_sentence_matrix(&sw, &FeatureConfig::default()).unwrap();
            for j in 0..blocks.len() {
                let src = if j == a { b } else if j == b { a } else { j };
                prop_assert_eq!(n.column(j), m.column(src));
            }
        }
    }
}
