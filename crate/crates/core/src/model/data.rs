use crate::error::{Error, Result};
use crate::numerics::Rng;

/// A batch of equal-length token sequences, stored row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// `len() * seq_len` token ids.
    pub token_ids: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub(crate) fn validate(&self, vocab: usize, classes: usize, seq_len: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.token_ids.len() != self.labels.len() * seq_len {
            return Err(Error::InvalidArgument(format!(
                "batch holds {} tokens for {} sequences of length {seq_len}",
                self.token_ids.len(),
                self.labels.len()
            )));
        }
        if let Some(t) = self.token_ids.iter().find(|&&t| t >= vocab) {
            return Err(Error::OutOfRange(format!("token {t} with vocab {vocab}")));
        }
        if let Some(y) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::OutOfRange(format!("label {y} with {classes} classes")));
        }
        Ok(())
    }
}

/// Labeled token sequences for the majority-token task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub seq_len: usize,
    pub vocab: usize,
    pub tokens: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sequence(&self, i: usize) -> &[usize] {
        &self.tokens[i * self.seq_len..(i + 1) * self.seq_len]
    }

    /// Gathers the given samples into one batch.
    pub fn batch(&self, indices: &[usize]) -> Batch {
        let mut token_ids = Vec::with_capacity(indices.len() * self.seq_len);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            token_ids.extend_from_slice(self.sequence(i));
            labels.push(self.labels[i]);
        }
        Batch { token_ids, labels }
    }

    /// Consecutive batches in storage order; the last may be short.
    pub fn batches(&self, batch_size: usize) -> Vec<Batch> {
        let indices: Vec<usize> = (0..self.len()).collect();
        indices.chunks(batch_size.max(1)).map(|c| self.batch(c)).collect()
    }

    /// Same samples in a different order.
    pub fn permuted(&self, order: &[usize]) -> Dataset {
        let b = self.batch(order);
        Dataset {
            seq_len: self.seq_len,
            vocab: self.vocab,
            tokens: b.token_ids,
            labels: b.labels,
        }
    }
}

/// Most frequent token; the smallest id wins ties.
pub fn majority_label(seq: &[usize], vocab: usize) -> usize {
    let mut counts = vec![0usize; vocab];
    for &t in seq {
        counts[t] += 1;
    }
    let mut best = 0;
    for (t, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = t;
        }
    }
    best
}

/// Uniform random tokens labelled by [`majority_label`].
pub fn make_synthetic_dataset(seed: u64, n_samples: usize, seq_len: usize, vocab: usize) -> Result<Dataset> {
    if vocab < 2 {
        return Err(Error::InvalidArgument(format!("vocab must be at least 2, got {vocab}")));
    }
    let mut rng = Rng::new(seed);
    let mut tokens = Vec::with_capacity(n_samples * seq_len);
    let mut labels = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let start = tokens.len();
        for _ in 0..seq_len {
            tokens.push(rng.below(vocab));
        }
        labels.push(majority_label(&tokens[start..], vocab));
    }
    Ok(Dataset {
        seq_len,
        vocab,
        tokens,
        labels,
    })
}
