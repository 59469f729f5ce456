use std::collections::HashMap;
use std::sync::Arc;

use super::{LangModel, LmError, PrefixState, ScoreCounters};
use crate::corpus::TokenId;

/// Deterministic lookup model: the next token is `table[last order tokens]`,
/// or `fallback` when the prefix is shorter than `order` or misses the table.
#[derive(Debug, Clone)]
pub struct TableLM {
    vocab_size: usize,
    order: usize,
    table: Arc<HashMap<Vec<TokenId>, TokenId>>,
    fallback: TokenId,
    state: PrefixState,
}

impl TableLM {
    pub fn new(
        vocab_size: usize,
        order: usize,
        table: HashMap<Vec<TokenId>, TokenId>,
        fallback: TokenId,
    ) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::ZeroOrder);
        }
        for (ctx, &next) in &table {
            assert_eq!(ctx.len(), order, "table keys must have length {order}");
            if next as usize >= vocab_size {
                return Err(LmError::InvalidToken { id: next, vocab_size });
            }
        }
        if fallback as usize >= vocab_size {
            return Err(LmError::InvalidToken {
                id: fallback,
                vocab_size,
            });
        }
        Ok(TableLM {
            vocab_size,
            order,
            table: Arc::new(table),
            fallback,
            state: PrefixState::default(),
        })
    }

    /// A model that walks `cycle` forever: after `cycle[i]` comes
    /// `cycle[(i + 1) % len]`. Tokens in `cycle` must be distinct.
    pub fn cyclic(vocab_size: usize, cycle: &[TokenId], fallback: TokenId) -> Result<Self, LmError> {
        let table = cycle
            .iter()
            .enumerate()
            .map(|(i, &t)| (vec![t], cycle[(i + 1) % cycle.len()]))
            .collect();
        Self::new(vocab_size, 1, table, fallback)
    }

    /// Same table, empty cache.
    pub fn fresh(&self) -> Self {
        TableLM {
            state: PrefixState::default(),
            ..self.clone()
        }
    }

    fn predict(&self, prefix: &[TokenId]) -> TokenId {
        predict(&self.table, self.order, self.fallback, prefix)
    }
}

fn predict(
    table: &HashMap<Vec<TokenId>, TokenId>,
    order: usize,
    fallback: TokenId,
    prefix: &[TokenId],
) -> TokenId {
    if prefix.len() < order {
        return fallback;
    }
    table
        .get(&prefix[prefix.len() - order..])
        .copied()
        .unwrap_or(fallback)
}

impl LangModel for TableLM {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn state_len(&self) -> usize {
        self.state.tokens.len()
    }

    fn score_block(&mut self, block: &[TokenId]) -> Result<Vec<TokenId>, LmError> {
        let (table, order, fallback) = (&self.table, self.order, self.fallback);
        self.state
            .score_with(block, self.vocab_size, |p| predict(table, order, fallback, p))
    }

    fn next_argmax(&self) -> TokenId {
        self.predict(&self.state.tokens)
    }

    fn next_distribution(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.vocab_size];
        d[self.next_argmax() as usize] = 1.0;
        d
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

    #[test]
    fn reads_table_after_block() {
        let table = HashMap::from([(vec![1, 2], 3)]);
        let mut lm = TableLM::new(5, 2, table, 0).unwrap();
        lm.append(&[1]).unwrap();
        assert_eq!(lm.score_block(&[2]).unwrap(), vec![3]);
        assert_eq!(lm.next_argmax(), 3);
        assert_eq!(lm.next_distribution(), vec![0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn fallback_on_short_prefix_and_miss() {
        let mut lm = TableLM::new(5, 2, HashMap::from([(vec![1, 2], 3)]), 4).unwrap();
        assert_eq!(lm.next_argmax(), 4);
        assert_eq!(lm.score_block(&[2, 2]).unwrap(), vec![4, 4]);
    }

    #[test]
    fn truncate_contract() {
        let mut lm = TableLM::cyclic(6, &[1, 2, 3, 4], 5).unwrap();
        lm.append(&[1, 2, 3, 4]).unwrap();
        lm.truncate(4).unwrap();
        assert_eq!(lm.state_len(), 4);
        assert_eq!(
            lm.truncate(5),
            Err(LmError::TruncateBeyondState { keep: 5, len: 4 })
        );
        let first = lm.score_block(&[1, 2]).unwrap();
        lm.truncate(4).unwrap();
        assert_eq!(lm.score_block(&[1, 2]).unwrap(), first);
    }

    #[test]
    fn invalid_tokens_rejected() {
        let mut lm = TableLM::cyclic(3, &[1, 2], 0).unwrap();
        assert_eq!(
            lm.score_block(&[7]),
            Err(LmError::InvalidToken { id: 7, vocab_size: 3 })
        );
        assert_eq!(lm.score_block(&[]), Err(LmError::EmptyBlock));
        assert_eq!(lm.state_len(), 0);
    }
}
