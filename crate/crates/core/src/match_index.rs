//! Hash index over every `gamma`-token window of the context.
//!
//! Positions in [`MatchResult`] are 1-based, counting from the first context
//! token, so that `copy_start = source_pos + gamma` reads the same as the
//! index arithmetic in the non-overlap rule:
//! a window starting at `p` may be copied from when `p + γ − 1 < t − γ + 1`.

use std::collections::HashMap;

use thiserror::Error;

use crate::corpus::TokenId;

/// Snapshot of one bucket: (start position, window tokens) per entry.
pub type Bucket = Vec<(usize, Vec<TokenId>)>;

pub const DEFAULT_GAMMA: usize = 3;

/// Multiplier of the polynomial window hash (the 64-bit FNV prime).
pub const HASH_BASE: u64 = 1_099_511_628_211;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("gamma must be at least 1")]
    ZeroGamma,
    #[error("match copy start {copy_start} is past the end of a {len}-token context")]
    EmptyChunk { copy_start: usize, len: usize },
}

/// Hash function over a window of tokens.
pub trait WindowHasher {
    fn hash_window(&self, window: &[TokenId]) -> u64;
}

/// Polynomial hash with wrapping 64-bit arithmetic.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolyHash;

impl WindowHasher for PolyHash {
    #[inline]
    fn hash_window(&self, window: &[TokenId]) -> u64 {
        window.iter().fold(0u64, |h, &t| {
            h.wrapping_mul(HASH_BASE).wrapping_add(u64::from(t) + 1)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchResult {
    /// 1-based start of the earlier occurrence.
    pub source_pos: usize,
    /// 1-based position of the first token to copy.
    pub copy_start: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    pos: usize,
    tokens: Box<[TokenId]>,
}

/// Dictionary from window hash to every occurrence of that window, in
/// positional order.
#[derive(Debug, Clone)]
pub struct MatchIndex<H = PolyHash> {
    gamma: usize,
    hasher: H,
    buckets: HashMap<u64, Vec<Entry>>,
    len: usize,
    mix_steps: u64,
}

impl MatchIndex<PolyHash> {
    pub fn new(gamma: usize) -> Result<Self, IndexError> {
        Self::with_hasher(gamma, PolyHash)
    }
}

impl<H: WindowHasher> MatchIndex<H> {
    pub fn with_hasher(gamma: usize, hasher: H) -> Result<Self, IndexError> {
        if gamma == 0 {
            return Err(IndexError::ZeroGamma);
        }
        Ok(MatchIndex {
            gamma,
            hasher,
            buckets: HashMap::new(),
            len: 0,
            mix_steps: 0,
        })
    }

    /// Builds an index over all of `context` at once.
    pub fn build(gamma: usize, hasher: H, context: &[TokenId]) -> Result<Self, IndexError> {
        let mut index = Self::with_hasher(gamma, hasher)?;
        index.extend(context);
        Ok(index)
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    /// Number of context tokens covered.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Total per-token hash mixing steps performed so far.
    pub fn mix_steps(&self) -> u64 {
        self.mix_steps
    }

    /// Number of distinct windows stored.
    pub fn entries(&self) -> usize {
        self.buckets.values().map(Vec::len).sum()
    }

    fn hash(&mut self, window: &[TokenId]) -> u64 {
        self.mix_steps += window.len() as u64;
        self.hasher.hash_window(window)
    }

    /// Indexes every window that ends in `context[self.len()..]`. `context`
    /// must be the full accepted sequence, of which the previously indexed
    /// part is a prefix. Returns the number of windows inserted.
    pub fn extend(&mut self, context: &[TokenId]) -> usize {
        debug_assert!(context.len() >= self.len);
        let g = self.gamma;
        let mut inserted = 0;
        for end in (self.len + 1).max(g)..=context.len() {
            let start = end - g;
            let window = &context[start..end];
            let h = self.hash(window);
            self.buckets.entry(h).or_default().push(Entry {
                pos: start + 1,
                tokens: window.into(),
            });
            inserted += 1;
        }
        self.len = context.len();
        inserted
    }

    /// Earliest occurrence of the last `gamma` tokens of `context[..t]` that
    /// ends strictly before the current window starts.
    pub fn lookup(&mut self, context: &[TokenId], t: usize) -> Option<MatchResult> {
        let g = self.gamma;
        if t < g || t > context.len() {
            return None;
        }
        let window = &context[t - g..t];
        let h = self.hash(window);
        let bucket = self.buckets.get(&h)?;
        bucket
            .iter()
            .take_while(|e| e.pos + g - 1 < t - g + 1)
            .find(|e| *e.tokens == *window)
            .map(|e| MatchResult {
                source_pos: e.pos,
                copy_start: e.pos + g,
            })
    }

    /// Positions stored for `window`, in insertion order, after exact
    /// confirmation.
    pub fn occurrences(&self, window: &[TokenId]) -> Vec<usize> {
        self.buckets
            .get(&self.hasher.hash_window(window))
            .map(|b| b.iter().filter(|e| *e.tokens == *window).map(|e| e.pos).collect())
            .unwrap_or_default()
    }

    /// Bucket contents as (hash, entries), sorted by hash.
    pub fn snapshot(&self) -> Vec<(u64, Bucket)> {
        let mut out: Vec<_> = self
            .buckets
            .iter()
            .map(|(h, b)| (*h, b.iter().map(|e| (e.pos, e.tokens.to_vec())).collect()))
            .collect();
        out.sort();
        out
    }
}

/// Tokens to propose for a match: up to `chunk_len` tokens starting at
/// `copy_start`, cut short at the end of the context.
pub fn extract_chunk(
    context: &[TokenId],
    found: MatchResult,
    chunk_len: usize,
) -> Result<&[TokenId], IndexError> {
    let start = found.copy_start - 1;
    if start >= context.len() {
        return Err(IndexError::EmptyChunk {
            copy_start: found.copy_start,
            len: context.len(),
        });
    }
    let end = context.len().min(start + chunk_len);
    Ok(&context[start..end])
}
