use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CorpusError, LabeledCorpus, Split};

/// `labeled : unlabeled` draw ratio; the default is 1:20.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpsampleRatio {
    pub labeled: u32,
    pub unlabeled: u32,
}

impl UpsampleRatio {
    pub const DEFAULT: UpsampleRatio = UpsampleRatio {
        labeled: 1,
        unlabeled: 20,
    };

    pub fn labeled_fraction(&self) -> f64 {
        f64::from(self.labeled) / f64::from(self.labeled + self.unlabeled)
    }
}

/// Row-major block of framed token rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<u32>,
    pub rows: usize,
    pub width: usize,
    /// Corpus entry index of each row.
    pub entries: Vec<usize>,
}

impl TokenBatch {
    pub fn row(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..(r + 1) * self.width]
    }
}

/// Infinite, seed-deterministic stream of training batches.
pub struct BatchStream<'a> {
    corpus: &'a LabeledCorpus,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    all: Vec<usize>,
    ratio: Option<UpsampleRatio>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl<'a> BatchStream<'a> {
    /// Index of the next entry to place in a batch.
    fn draw(&mut self) -> usize {
        match self.ratio {
            Some(r) => {
                let pick_labeled = self.rng.random::<f64>() < r.labeled_fraction();
                let pool = if pick_labeled { &self.labeled } else { &self.unlabeled };
                pool[self.rng.random_range(0..pool.len())]
            }
            None => self.all[self.rng.random_range(0..self.all.len())],
        }
    }

    pub fn next_batch(&mut self) -> TokenBatch {
        let width = self.corpus.max_seq_length + 2;
        let mut ids = Vec::with_capacity(self.batch_size * width);
        let mut entries = Vec::with_capacity(self.batch_size);
        for _ in 0..self.batch_size {
            let idx = self.draw();
            let seq = &self.corpus.entries[idx].sequence;
            ids.extend(self.corpus.vocabulary.frame(seq, self.corpus.max_seq_length));
            entries.push(idx);
        }
        TokenBatch {
            ids,
            rows: self.batch_size,
            width,
            entries,
        }
    }
}

impl Iterator for BatchStream<'_> {
    type Item = TokenBatch;

    fn next(&mut self) -> Option<TokenBatch> {
        Some(self.next_batch())
    }
}

/// Batches drawn from the train split. With `ratio` set, labeled entries are drawn with
/// probability `labeled / (labeled + unlabeled)`.
pub fn training_batches(
    corpus: &LabeledCorpus,
    batch_size: usize,
    ratio: Option<UpsampleRatio>,
    seed: u64,
) -> Result<BatchStream<'_>, CorpusError> {
    let mut labeled = Vec::new();
    let mut unlabeled = Vec::new();
    for (i, e) in corpus.entries.iter().enumerate() {
        if e.split != Split::Train {
            continue;
        }
        if e.is_labeled() {
            labeled.push(i);
        } else {
            unlabeled.push(i);
        }
    }
    let all: Vec<usize> = corpus
        .entries
        .iter()
        .enumerate()
        .filter(|(_, e)| e.split == Split::Train)
        .map(|(i, _)| i)
        .collect();
    if all.is_empty() {
        return Err(CorpusError::EmptyTrainSplit);
    }
    if ratio.is_some() && (labeled.is_empty() || unlabeled.is_empty()) {
        return Err(CorpusError::UpsampleUnavailable {
            labeled: labeled.len(),
            unlabeled: unlabeled.len(),
        });
    }
    Ok(BatchStream {
        corpus,
        labeled,
        unlabeled,
        all,
        ratio,
        batch_size,
        rng: ChaCha8Rng::seed_from_u64(seed),
    })
}
