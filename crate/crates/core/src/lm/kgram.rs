use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{LangModel, LmError, PrefixState, ScoreCounters};
use crate::corpus::{TokenId, Vocabulary};

/// `format` tag of a k-gram dump.
pub const KGRAM_FORMAT: &str = "copyspec-kgram";
/// Current dump version.
pub const KGRAM_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
struct Histogram {
    counts: BTreeMap<TokenId, u64>,
    total: u64,
    argmax: TokenId,
}

impl Histogram {
    fn from_counts(counts: BTreeMap<TokenId, u64>) -> Self {
        let total = counts.values().sum();
        // BTreeMap iterates ids ascending, so the first maximum wins ties
        let mut argmax = 0;
        let mut best = 0;
        for (&id, &c) in &counts {
            if c > best {
                best = c;
                argmax = id;
            }
        }
        Histogram {
            counts,
            total,
            argmax,
        }
    }
}

/// Trained next-token counts for every context of length `0..=order`.
/// Immutable once built and meant to be shared between sessions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KgramCounts {
    order: usize,
    vocab_size: usize,
    histograms: HashMap<Vec<TokenId>, Histogram>,
}

impl KgramCounts {
    /// Counts every (context, next) pair of every sequence, for all context
    /// lengths up to `order`. Contexts never cross sequence boundaries.
    pub fn train(corpus: &[Vec<TokenId>], order: usize, vocab_size: usize) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::ZeroOrder);
        }
        let mut raw: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>> = HashMap::new();
        let mut any = false;
        for seq in corpus {
            for (j, &next) in seq.iter().enumerate() {
                if next as usize >= vocab_size {
                    return Err(LmError::InvalidToken { id: next, vocab_size });
                }
                any = true;
                for c in 0..=order.min(j) {
                    *raw.entry(seq[j - c..j].to_vec())
                        .or_default()
                        .entry(next)
                        .or_insert(0) += 1;
                }
            }
        }
        if !any {
            return Err(LmError::EmptyCorpus);
        }
        Ok(Self::from_raw(order, vocab_size, raw))
    }

    fn from_raw(order: usize, vocab_size: usize, raw: HashMap<Vec<TokenId>, BTreeMap<TokenId, u64>>) -> Self {
        let histograms = raw
            .into_iter()
            .map(|(k, v)| (k, Histogram::from_counts(v)))
            .collect();
        KgramCounts {
            order,
            vocab_size,
            histograms,
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Widens the vocabulary, e.g. after a loaded model meets new symbols.
    /// Never shrinks it.
    pub fn with_vocab_size(mut self, vocab_size: usize) -> Self {
        self.vocab_size = self.vocab_size.max(vocab_size);
        self
    }

    /// The histogram used for `prefix`: the longest suffix of at most
    /// `order` tokens that was seen in training.
    fn backoff(&self, prefix: &[TokenId]) -> &Histogram {
        let longest = self.order.min(prefix.len());
        (0..=longest)
            .rev()
            .find_map(|c| self.histograms.get(&prefix[prefix.len() - c..]))
            .expect("empty context is always trained")
    }

    pub fn argmax(&self, prefix: &[TokenId]) -> TokenId {
        self.backoff(prefix).argmax
    }

    pub fn distribution(&self, prefix: &[TokenId]) -> Vec<f64> {
        let h = self.backoff(prefix);
        let mut d = vec![0.0; self.vocab_size];
        for (&id, &c) in &h.counts {
            d[id as usize] = c as f64 / h.total as f64;
        }
        d
    }

    /// Raw count of `next` after exactly `context`.
    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.histograms
            .get(context)
            .and_then(|h| h.counts.get(&next).copied())
            .unwrap_or(0)
    }

    /// Serializes to the versioned JSON dump, optionally carrying the
    /// vocabulary the ids refer to. Output is sorted and reproducible.
    pub fn to_json(&self, vocab: Option<&Vocabulary>) -> String {
        let mut contexts: Vec<DumpContext> = self
            .histograms
            .iter()
            .map(|(ctx, h)| DumpContext {
                context: ctx.clone(),
                next: h.counts.iter().map(|(&id, &c)| (id, c)).collect(),
            })
            .collect();
        contexts.sort_by(|a, b| {
            a.context
                .len()
                .cmp(&b.context.len())
                .then(a.context.cmp(&b.context))
        });
        let dump = Dump {
            format: KGRAM_FORMAT.to_owned(),
            version: KGRAM_VERSION,
            order: self.order,
            vocab_size: self.vocab_size,
            symbols: vocab.map(|v| v.symbols().to_vec()),
            contexts,
        };
        serde_json::to_string(&dump).expect("dump serializes")
    }

    pub fn from_json(text: &str) -> Result<(Self, Option<Vocabulary>), LmError> {
        let dump: Dump = serde_json::from_str(text).map_err(|e| LmError::Dump(e.to_string()))?;
        if dump.format != KGRAM_FORMAT {
            return Err(LmError::Dump(format!("unexpected format {:?}", dump.format)));
        }
        if dump.version != KGRAM_VERSION {
            return Err(LmError::Dump(format!("unsupported version {}", dump.version)));
        }
        if dump.order == 0 {
            return Err(LmError::ZeroOrder);
        }
        let mut raw = HashMap::new();
        for c in dump.contexts {
            if c.context.len() > dump.order {
                return Err(LmError::Dump("context longer than model order".into()));
            }
            for &(id, _) in &c.next {
                if id as usize >= dump.vocab_size {
                    return Err(LmError::InvalidToken {
                        id,
                        vocab_size: dump.vocab_size,
                    });
                }
            }
            raw.insert(c.context, c.next.into_iter().collect::<BTreeMap<_, _>>());
        }
        if !raw.contains_key(&Vec::new()) {
            return Err(LmError::Dump("missing empty-context histogram".into()));
        }
        let vocab = dump.symbols.map(Vocabulary::from);
        Ok((Self::from_raw(dump.order, dump.vocab_size, raw), vocab))
    }
}

#[derive(Serialize, Deserialize)]
struct Dump {
    format: String,
    version: u32,
    order: usize,
    vocab_size: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    symbols: Option<Vec<String>>,
    contexts: Vec<DumpContext>,
}

#[derive(Serialize, Deserialize)]
struct DumpContext {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

/// k-gram model with longest-suffix backoff and smallest-id tie breaking.
/// The counts are shared; each instance owns its own cached prefix.
#[derive(Debug, Clone)]
pub struct KgramLM {
    counts: Arc<KgramCounts>,
    state: PrefixState,
}

impl KgramLM {
    pub fn new(counts: Arc<KgramCounts>) -> Self {
        KgramLM {
            counts,
            state: PrefixState::default(),
        }
    }

    pub fn train(corpus: &[Vec<TokenId>], order: usize, vocab_size: usize) -> Result<Self, LmError> {
        KgramCounts::train(corpus, order, vocab_size).map(|c| Self::new(Arc::new(c)))
    }

    pub fn counts(&self) -> &Arc<KgramCounts> {
        &self.counts
    }

    pub fn order(&self) -> usize {
        self.counts.order
    }
}

impl LangModel for KgramLM {
    fn vocab_size(&self) -> usize {
        self.counts.vocab_size
    }

    fn state_len(&self) -> usize {
        self.state.tokens.len()
    }

    fn score_block(&mut self, block: &[TokenId]) -> Result<Vec<TokenId>, LmError> {
        let counts = &self.counts;
        self.state
            .score_with(block, counts.vocab_size, |p| counts.argmax(p))
    }

    fn next_argmax(&self) -> TokenId {
        self.counts.argmax(&self.state.tokens)
    }

    fn next_distribution(&self) -> Vec<f64> {
        self.counts.distribution(&self.state.tokens)
    }

    fn truncate(&mut self, keep_len: usize) -> Result<(), LmError> {
        self.state.truncate(keep_len)
    }

    fn counters(&self) -> ScoreCounters {
        self.state.counters
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force counter over all (context, next) pairs.
    fn hand_count(corpus: &[Vec<TokenId>], ctx: &[TokenId], next: TokenId) -> u64 {
        corpus
            .iter()
            .flat_map(|s| (ctx.len()..s.len()).map(move |j| (&s[j - ctx.len()..j], s[j])))
            .filter(|(c, n)| *c == ctx && *n == next)
            .count() as u64
    }

    #[test]
    fn trigram_argmax() {
        let corpus = vec![vec![1, 2, 3, 1, 2, 3]];
        let mut lm = KgramLM::train(&corpus, 2, 4).unwrap();
        assert_eq!(hand_count(&corpus, &[1, 2], 3), 2);
        assert_eq!(lm.counts().count(&[1, 2], 3), 2);
        assert_eq!(lm.score_block(&[1, 2]).unwrap()[1], 3);
    }

    #[test]
    fn unigram_order_counts() {
        let corpus = vec![vec![1, 2, 1, 2, 1]];
        let mut lm = KgramLM::train(&corpus, 1, 3).unwrap();
        assert_eq!(lm.counts().count(&[1], 2), 2);
        assert_eq!(lm.counts().count(&[1], 1), 0);
        lm.append(&[1]).unwrap();
        assert_eq!(lm.next_argmax(), 2);
        assert_eq!(lm.next_distribution(), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn single_symbol_corpus_backs_off() {
        let mut lm = KgramLM::train(&[vec![7]], 2, 8).unwrap();
        assert_eq!(lm.next_argmax(), 7);
        assert_eq!(lm.score_block(&[3, 5, 7]).unwrap(), vec![7, 7, 7]);
    }

    #[test]
    fn ties_go_to_smallest_id() {
        let lm = KgramLM::train(&[vec![4, 9], vec![4, 2], vec![4, 6]], 1, 10).unwrap();
        assert_eq!(lm.counts().argmax(&[4]), 2);
        assert_eq!(lm.counts().argmax(&[]), 4);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert_eq!(KgramLM::train(&[vec![]], 2, 3).unwrap_err(), LmError::EmptyCorpus);
    }

    #[test]
    fn dump_roundtrip() {
        let corpus = vec![vec![1, 2, 3, 1, 2, 4, 0], vec![3, 3, 1]];
        let counts = KgramCounts::train(&corpus, 3, 5).unwrap();
        let vocab = Vocabulary::from((0..5).map(|i| format!("s{i}")).collect::<Vec<_>>());
        let text = counts.to_json(Some(&vocab));
        let (back, v) = KgramCounts::from_json(&text).unwrap();
        assert_eq!(back, counts);
        assert_eq!(v, Some(vocab));
        assert_eq!(back.to_json(v.as_ref()), text);
    }

    #[test]
    fn dump_rejects_other_versions() {
        let counts = KgramCounts::train(&[vec![1, 2]], 1, 3).unwrap();
        let text = counts.to_json(None).replace("\"version\":1", "\"version\":9");
        assert!(matches!(KgramCounts::from_json(&text), Err(LmError::Dump(_))));
    }

    proptest! {
        #[test]
        fn distributions_normalize_and_agree_with_argmax(
            corpus in proptest::collection::vec(proptest::collection::vec(0u32..6, 1..30), 1..4),
            prefix in proptest::collection::vec(0u32..6, 0..6),
            order in 1usize..4,
        ) {
            let counts = KgramCounts::train(&corpus, order, 6).unwrap();
            let d = counts.distribution(&prefix);
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let best = d.iter().cloned().fold(f64::MIN, f64::max);
            let first_best = d.iter().position(|&p| p == best).unwrap() as u32;
            prop_assert_eq!(counts.argmax(&prefix), first_best);
        }

        #[test]
        fn training_is_deterministic(
            corpus in proptest::collection::vec(proptest::collection::vec(0u32..5, 1..20), 1..3),
            prefix in proptest::collection::vec(0u32..5, 0..3),
        ) {
            let a = KgramCounts::train(&corpus, 2, 5).unwrap();
            let b = KgramCounts::train(&corpus, 2, 5).unwrap();
            prop_assert_eq!(a.argmax(&prefix), b.argmax(&prefix));
            prop_assert_eq!(a.to_json(None), b.to_json(None));
        }
    }
}
