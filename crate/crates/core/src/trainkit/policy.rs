use rand::Rng;
use serde::{Deserialize, Serialize};

use super::vocab::{Prompt, Vocab, EOS_ID};
use super::TrainError;

/// Tabular softmax policy. The logits for the next token are one row of a
/// table indexed by (prompt, position, previous token), so every
/// log-probability and its gradient are exact and cheap. Registered prompts
/// own disjoint blocks of rows; any other prompt uses one shared block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPolicy {
    pub vocab: Vocab,
    /// Sorted, deduplicated hashes of the registered prompts.
    pub prompts: Vec<u64>,
    pub max_length: usize,
    pub theta: Vec<f64>,
}

fn log_softmax_row(row: &[f64]) -> (f64, f64) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = row.iter().map(|x| (x - max).exp()).sum();
    (max, max + sum.ln())
}

impl ToyPolicy {
    /// All-zero logits: uniform over the vocabulary at every context.
    pub fn uniform(vocab: Vocab, prompts: &[Prompt], max_length: usize) -> Self {
        assert!(max_length > 0 && !vocab.is_empty());
        let mut hashes: Vec<u64> = prompts.iter().map(|p| p.hash).collect();
        hashes.sort_unstable();
        hashes.dedup();
        let n_rows = Self::rows_for(hashes.len(), max_length, vocab.len());
        Self {
            theta: vec![0.0; n_rows * vocab.len()],
            vocab,
            prompts: hashes,
            max_length,
        }
    }

    /// Logits drawn uniformly from `[-scale, scale]`.
    pub fn random(vocab: Vocab, prompts: &[Prompt], max_length: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut p = Self::uniform(vocab, prompts, max_length);
        for t in &mut p.theta {
            *t = rng.gen_range(-scale..=scale);
        }
        p
    }

    /// Rows for `n_prompts` registered prompts plus the shared block.
    pub fn rows_for(n_prompts: usize, max_length: usize, vocab_size: usize) -> usize {
        (n_prompts + 1) * max_length * (vocab_size + 1)
    }

    /// Parameter count implied by the vocabulary, prompts and length.
    pub fn expected_params(&self) -> usize {
        Self::rows_for(self.prompts.len(), self.max_length, self.vocab_size()) * self.vocab_size()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn is_registered(&self, prompt: &Prompt) -> bool {
        self.prompts.binary_search(&prompt.hash).is_ok()
    }

    /// Row for the next token. Positions past `max_length - 1` share the last
    /// position's rows.
    pub fn context_row(&self, prompt: &Prompt, position: usize, prev: Option<u32>) -> usize {
        let slot = self.prompts.binary_search(&prompt.hash).unwrap_or(self.prompts.len());
        let pos = position.min(self.max_length - 1);
        let prev = prev.map_or(0, |t| t as usize + 1).min(self.vocab_size());
        (slot * self.max_length + pos) * (self.vocab_size() + 1) + prev
    }

    fn row(&self, bucket: usize) -> &[f64] {
        let v = self.vocab_size();
        &self.theta[bucket * v..(bucket + 1) * v]
    }

    /// Next-token distribution at a row.
    pub fn probs(&self, row: usize) -> Vec<f64> {
        let row = self.row(row);
        let (_, lse) = log_softmax_row(row);
        row.iter().map(|x| (x - lse).exp()).collect()
    }

    /// Rows visited while generating `tokens` after `prompt`.
    pub fn contexts(&self, prompt: &Prompt, tokens: &[u32]) -> Vec<usize> {
        (0..tokens.len())
            .map(|t| self.context_row(prompt, t, t.checked_sub(1).map(|p| tokens[p])))
            .collect()
    }

    pub fn check_tokens(&self, tokens: &[u32]) -> Result<(), TrainError> {
        match tokens.iter().find(|&&t| t as usize >= self.vocab_size()) {
            Some(t) => Err(TrainError::TokenOutOfRange(*t)),
            None => Ok(()),
        }
    }

    pub fn log_prob(&self, prompt: &Prompt, tokens: &[u32]) -> f64 {
        self.contexts(prompt, tokens)
            .into_iter()
            .zip(tokens)
            .map(|(b, &y)| {
                let row = self.row(b);
                row[y as usize] - log_softmax_row(row).1
            })
            .sum()
    }

    /// Returns `log π(tokens | prompt)` and adds `scale · ∇θ log π` to `grad`.
    pub fn log_prob_grad(&self, prompt: &Prompt, tokens: &[u32], scale: f64, grad: &mut [f64]) -> f64 {
        let v = self.vocab_size();
        let mut total = 0.0;
        for (b, &y) in self.contexts(prompt, tokens).into_iter().zip(tokens) {
            let row = self.row(b);
            let (_, lse) = log_softmax_row(row);
            total += row[y as usize] - lse;
            if scale != 0.0 {
                let g = &mut grad[b * v..(b + 1) * v];
                for (j, x) in row.iter().enumerate() {
                    g[j] -= scale * (x - lse).exp();
                }
                g[y as usize] += scale;
            }
        }
        total
    }

    /// Sum of next-token entropies over the contexts visited by `tokens`;
    /// adds `scale · ∇θ` of that sum to `grad`.
    pub fn entropy_grad(&self, prompt: &Prompt, tokens: &[u32], scale: f64, grad: &mut [f64]) -> f64 {
        let v = self.vocab_size();
        let mut total = 0.0;
        for b in self.contexts(prompt, tokens) {
            let row = self.row(b);
            let (_, lse) = log_softmax_row(row);
            let logp: Vec<f64> = row.iter().map(|x| x - lse).collect();
            let h: f64 = -logp.iter().map(|l| l.exp() * l).sum::<f64>();
            total += h;
            if scale != 0.0 {
                let g = &mut grad[b * v..(b + 1) * v];
                for (j, l) in logp.iter().enumerate() {
                    g[j] -= scale * l.exp() * (l + h);
                }
            }
        }
        total
    }

    /// Ancestral sample: stops after the end token or at `max_length`.
    pub fn sample(&self, prompt: &Prompt, rng: &mut impl Rng) -> Vec<u32> {
        let mut out = Vec::new();
        while out.len() < self.max_length {
            let b = self.context_row(prompt, out.len(), out.last().copied());
            let p = self.probs(b);
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = p.len() - 1;
            for (j, pj) in p.iter().enumerate() {
                acc += pj;
                if u < acc {
                    pick = j;
                    break;
                }
            }
            out.push(pick as u32);
            if pick as u32 == EOS_ID {
                break;
            }
        }
        out
    }
}
