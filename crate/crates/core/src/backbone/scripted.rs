//! Lookup-table language model for probes and tests.

use ndarray::{Array2, Array3};

use super::{check_input, ForwardOutput, LanguageModel};
use crate::error::Result;

/// Continues any sequence that extends a registered prompt with the
/// registered continuation, then EOS. Unknown prompts get EOS immediately.
///
/// With `attention_layers > 0`, captured attention is uniform over the
/// visible (causal) positions in every layer and head.
#[derive(Debug, Clone)]
pub struct ScriptedModel {
    pub vocab_size: usize,
    pub max_positions: usize,
    pub eos: u32,
    pub attention_layers: usize,
    pub heads: usize,
    entries: Vec<(Vec<u32>, Vec<u32>)>,
}

impl ScriptedModel {
    pub fn new(vocab_size: usize, max_positions: usize, eos: u32) -> Self {
        Self {
            vocab_size,
            max_positions,
            eos,
            attention_layers: 0,
            heads: 1,
            entries: Vec::new(),
        }
    }

    pub fn with_attention(mut self, layers: usize, heads: usize) -> Self {
        self.attention_layers = layers;
        self.heads = heads;
        self
    }

    pub fn insert(&mut self, prompt: Vec<u32>, continuation: Vec<u32>) {
        self.entries.push((prompt, continuation));
    }

    fn next_token(&self, seq: &[u32]) -> u32 {
        // longest matching prompt wins
        self.entries
            .iter()
            .filter(|(p, c)| {
                seq.starts_with(p) && seq.len() - p.len() <= c.len() && seq[p.len()..] == c[..seq.len() - p.len()]
            })
            .max_by_key(|(p, _)| p.len())
            .and_then(|(p, c)| c.get(seq.len() - p.len()).copied())
            .unwrap_or(self.eos)
    }
}

impl LanguageModel for ScriptedModel {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn max_positions(&self) -> usize {
        self.max_positions
    }

    fn forward(&self, token_ids: &[u32], capture_attention: bool) -> Result<ForwardOutput> {
        check_input(token_ids, self.vocab_size, self.max_positions)?;
        let t = token_ids.len();
        let mut logits = Array2::zeros((t, self.vocab_size));
        for i in 0..t {
            logits[[i, self.next_token(&token_ids[..=i]) as usize]] = 1.0;
        }
        let attention = (capture_attention && self.attention_layers > 0).then(|| {
            let mut a = Array3::zeros((self.heads, t, t));
            for h in 0..self.heads {
                for i in 0..t {
                    for j in 0..=i {
                        a[[h, i, j]] = 1.0 / (i + 1) as f64;
                    }
                }
            }
            vec![a; self.attention_layers]
        });
        Ok(ForwardOutput { logits, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn replays_registered_continuations() {
        let mut m = ScriptedModel::new(10, 32, 2);
        m.insert(vec![1, 5], vec![7, 8]);
        m.insert(vec![1, 5, 6], vec![9]);
        assert_eq!(m.generate(&[1, 5], 10, 2).unwrap(), vec![7, 8]);
        assert_eq!(m.generate(&[1, 5, 6], 10, 2).unwrap(), vec![9]);
        assert_eq!(m.generate(&[1, 4], 10, 2).unwrap(), Vec::<u32>::new());
    }

    #[test]
    fn uniform_attention_rows_sum_to_one() {
        let m = ScriptedModel::new(10, 32, 2).with_attention(3, 2);
        let out = m.forward(&[1, 4, 5, 6], true).unwrap();
        let att = out.attention.unwrap();
        assert_eq!(att.len(), 3);
        for row in att[0]
            .outer_iter()
            .flat_map(|h| h.rows().into_iter().map(|r| r.sum()).collect::<Vec<_>>())
        {
            assert!((row - 1.0).abs() < 1e-12);
        }
    }
}
