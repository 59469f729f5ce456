//! Left-context skip-gram: token embeddings trained so that the mean of the
//! previous `gamma` token vectors predicts the next token under a full
//! softmax. Input and output vectors are tied, so the cosine similarity
//! between a context mean and the next token's vector measures how well the
//! left context points at what follows.

use num_traits::{Float, FromPrimitive};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::corpus::TokenId;

pub const MAX_SKIPGRAM_VOCAB: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkipGramConfig {
    pub gamma: usize,
    pub dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            gamma: 3,
            dim: 16,
            epochs: 30,
            learning_rate: 0.25,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel<F> {
    pub dim: usize,
    pub gamma: usize,
    pub vectors: Vec<Vec<F>>,
    /// Mean training loss per epoch.
    pub epoch_losses: Vec<F>,
}

fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Mean of the vectors of `tokens`.
pub fn context_vector<F: Float + FromPrimitive>(model: &EmbeddingModel<F>, tokens: &[TokenId]) -> Vec<F> {
    let mut out = vec![F::zero(); model.dim];
    for &t in tokens {
        for (o, &v) in out.iter_mut().zip(&model.vectors[t as usize]) {
            *o = *o + v;
        }
    }
    let n = F::from_usize(tokens.len().max(1)).unwrap();
    out.iter_mut().for_each(|o| *o = *o / n);
    out
}

/// `a·b / (|a| |b|)`, clamped to `[-1, 1]`.
pub fn cosine_similarity<F: Float>(a: &[F], b: &[F]) -> Result<F, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::DimMismatch(a.len(), b.len()));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == F::zero() || nb == F::zero() {
        return Err(AnalysisError::ZeroVector);
    }
    let cs = dot(a, b) / (na * nb);
    Ok(cs.max(-F::one()).min(F::one()))
}

impl<F: Float + FromPrimitive> EmbeddingModel<F> {
    pub fn vocab_size(&self) -> usize {
        self.vectors.len()
    }

    /// Softmax over the vocabulary given a context vector.
    pub fn next_probabilities(&self, context: &[F]) -> Vec<F> {
        let logits: Vec<F> = self.vectors.iter().map(|v| dot(v, context)).collect();
        softmax(&logits)
    }
}

fn softmax<F: Float>(logits: &[F]) -> Vec<F> {
    let max = logits.iter().cloned().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum = exps.iter().fold(F::zero(), |a, &b| a + b);
    exps.into_iter().map(|e| e / sum).collect()
}

/// Every (previous `gamma` tokens, next token) pair, in corpus order.
fn pairs(corpus: &[Vec<TokenId>], gamma: usize) -> Vec<(&[TokenId], TokenId)> {
    corpus
        .iter()
        .flat_map(|s| (gamma..s.len()).map(move |j| (&s[j - gamma..j], s[j])))
        .collect()
}

/// Trains tied embeddings by SGD on the full-softmax negative log
/// likelihood of each next token given its left-context mean.
pub fn train_left_skipgram<F: Float + FromPrimitive>(
    corpus: &[Vec<TokenId>],
    vocab_size: usize,
    config: &SkipGramConfig,
) -> Result<EmbeddingModel<F>, AnalysisError> {
    if vocab_size > MAX_SKIPGRAM_VOCAB {
        return Err(AnalysisError::VocabTooLarge(vocab_size));
    }
    if config.dim < 2 {
        return Err(AnalysisError::BadSkipGramConfig("dim must be at least 2"));
    }
    if config.gamma == 0 {
        return Err(AnalysisError::BadSkipGramConfig("gamma must be at least 1"));
    }
    if vocab_size == 0 {
        return Err(AnalysisError::BadSkipGramConfig("empty vocabulary"));
    }
    let c = |x: f64| F::from_f64(x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bound = 0.5 / config.dim as f64;
    let mut vectors: Vec<Vec<F>> = (0..vocab_size)
        .map(|_| {
            (0..config.dim)
                .map(|_| c(rng.gen_range(-bound..=bound)))
                .collect()
        })
        .collect();

    let mut examples = pairs(corpus, config.gamma);
    let out_of_vocab = |t: &TokenId| *t as usize >= vocab_size;
    if examples
        .iter()
        .any(|(ctx, t)| out_of_vocab(t) || ctx.iter().any(out_of_vocab))
    {
        return Err(AnalysisError::BadSkipGramConfig("token outside vocabulary"));
    }
    let lr = c(config.learning_rate);
    let inv_gamma = c(1.0 / config.gamma as f64);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut grad_ctx = vec![F::zero(); config.dim];

    for _ in 0..config.epochs {
        examples.shuffle(&mut rng);
        let mut total = F::zero();
        for &(ctx, target) in &examples {
            let mut h = vec![F::zero(); config.dim];
            for &t in ctx {
                for (hv, &v) in h.iter_mut().zip(&vectors[t as usize]) {
                    *hv = *hv + v * inv_gamma;
                }
            }
            let logits: Vec<F> = vectors.iter().map(|v| dot(v, &h)).collect();
            let probs = softmax(&logits);
            total = total - probs[target as usize].max(c(1e-300)).ln();

            // d loss / d h = sum_j p_j v_j - v_target
            grad_ctx.iter_mut().for_each(|g| *g = F::zero());
            for (p, v) in probs.iter().zip(&vectors) {
                for (g, &x) in grad_ctx.iter_mut().zip(v) {
                    *g = *g + *p * x;
                }
            }
            for (g, &x) in grad_ctx.iter_mut().zip(&vectors[target as usize]) {
                *g = *g - x;
            }
            // output role: d loss / d v_j = (p_j - [j = target]) h
            for (j, v) in vectors.iter_mut().enumerate() {
                let coef = probs[j] - if j == target as usize { F::one() } else { F::zero() };
                for (x, &hv) in v.iter_mut().zip(&h) {
                    *x = *x - lr * coef * hv;
                }
            }
            // input role, shared equally by the context tokens
            for &t in ctx {
                for (x, &g) in vectors[t as usize].iter_mut().zip(&grad_ctx) {
                    *x = *x - lr * g * inv_gamma;
                }
            }
        }
        let n = F::from_usize(examples.len().max(1)).unwrap();
        epoch_losses.push(total / n);
    }
    Ok(EmbeddingModel {
        dim: config.dim,
        gamma: config.gamma,
        vectors,
        epoch_losses,
    })
}

/// Cosine similarity of every (left-`gamma` context mean, next token) pair.
pub fn cs_pairs<F: Float + FromPrimitive>(
    corpus: &[Vec<TokenId>],
    model: &EmbeddingModel<F>,
    gamma: usize,
) -> Result<Vec<F>, AnalysisError> {
    pairs(corpus, gamma)
        .into_iter()
        .map(|(ctx, t)| cosine_similarity(&context_vector(model, ctx), &model.vectors[t as usize]))
        .collect()
}

/// Same pairs with the next tokens shuffled among themselves.
pub fn permuted_cs_pairs<F: Float + FromPrimitive>(
    corpus: &[Vec<TokenId>],
    model: &EmbeddingModel<F>,
    gamma: usize,
    seed: u64,
) -> Result<Vec<F>, AnalysisError> {
    let ps = pairs(corpus, gamma);
    let mut nexts: Vec<TokenId> = ps.iter().map(|&(_, t)| t).collect();
    nexts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    ps.into_iter()
        .zip(nexts)
        .map(|((ctx, _), t)| cosine_similarity(&context_vector(model, ctx), &model.vectors[t as usize]))
        .collect()
}

fn mean<F: Float + FromPrimitive>(xs: &[F]) -> Result<F, AnalysisError> {
    if xs.is_empty() {
        return Err(AnalysisError::NoPairs);
    }
    Ok(xs.iter().fold(F::zero(), |a, &b| a + b) / F::from_usize(xs.len()).unwrap())
}

/// Mean cosine similarity for each `gamma`, all from one embedding model.
pub fn cs_profile<F: Float + FromPrimitive>(
    corpus: &[Vec<TokenId>],
    model: &EmbeddingModel<F>,
    gammas: &[usize],
) -> Result<Vec<(usize, F)>, AnalysisError> {
    gammas
        .iter()
        .map(|&g| Ok((g, mean(&cs_pairs(corpus, model, g)?)?)))
        .collect()
}

/// Mean cosine similarity for each `gamma`, retraining the embeddings with
/// that `gamma` every time.
pub fn cs_profile_retrained<F: Float + FromPrimitive>(
    corpus: &[Vec<TokenId>],
    vocab_size: usize,
    base: &SkipGramConfig,
    gammas: &[usize],
) -> Result<Vec<(usize, F)>, AnalysisError> {
    gammas
        .iter()
        .map(|&g| {
            let model = train_left_skipgram::<F>(corpus, vocab_size, &SkipGramConfig { gamma: g, ..*base })?;
            Ok((g, mean(&cs_pairs(corpus, &model, g)?)?))
        })
        .collect()
}

/// Observed mean cosine similarity at one `gamma` against the shuffled-pair
/// baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CsComparison<F> {
    pub gamma: usize,
    pub pairs: usize,
    pub mean: F,
    pub permuted_mean: F,
    /// Standard error of `mean - permuted_mean` (unpooled variances).
    pub std_error: F,
    /// `(mean - permuted_mean) / std_error`; zero when the error is zero.
    pub z: F,
}

fn mean_and_var<F: Float + FromPrimitive>(xs: &[F]) -> (F, F) {
    let n = F::from_usize(xs.len()).unwrap();
    let m = xs.iter().fold(F::zero(), |a, &b| a + b) / n;
    if xs.len() < 2 {
        return (m, F::zero());
    }
    let ss = xs.iter().fold(F::zero(), |a, &x| a + (x - m) * (x - m));
    (m, ss / (n - F::one()))
}

pub fn compare_to_permuted<F: Float + FromPrimitive>(
    corpus: &[Vec<TokenId>],
    model: &EmbeddingModel<F>,
    gamma: usize,
    seed: u64,
) -> Result<CsComparison<F>, AnalysisError> {
    let observed = cs_pairs(corpus, model, gamma)?;
    let permuted = permuted_cs_pairs(corpus, model, gamma, seed)?;
    if observed.is_empty() {
        return Err(AnalysisError::NoPairs);
    }
    let n = F::from_usize(observed.len()).unwrap();
    let (m1, v1) = mean_and_var(&observed);
    let (m2, v2) = mean_and_var(&permuted);
    let std_error = ((v1 + v2) / n).sqrt();
    let z = if std_error > F::zero() {
        (m1 - m2) / std_error
    } else {
        F::zero()
    };
    Ok(CsComparison {
        gamma,
        pairs: observed.len(),
        mean: m1,
        permuted_mean: m2,
        std_error,
        z,
    })
}
