//! Synthetic key-value retrieval task: a context embeds key=value pairs with
//! distractors, a question names one key, and the model must produce the
//! paired value. Serves as the context-retention probe under cache sharing.
//!
//! Rendered form, with `>` marking where the answer starts:
//!
//! ```text
//! context first:  k1=v1;k2=v2;k3=v3;?k2>v2
//! question first: ?k2;k1=v1;k2=v2;k3=v3;>v2
//! ```

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::tokenizer::{self, EOS, PAD};
use crate::cache::{greedy_generate, CacheStore, EngineError};
use crate::model::Model;
use crate::routing::SharingStrategy;
use crate::scalar::Scalar;
use crate::train::BatchSource;

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleOrder {
    QuestionFirst,
    ContextFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalExample {
    pub context: String,
    pub question: String,
    pub answer: String,
    pub order: ExampleOrder,
}

impl RetrievalExample {
    /// Everything up to and including the answer marker.
    pub fn prompt(&self) -> String {
        match self.order {
            ExampleOrder::ContextFirst => format!("{}?{}>", self.context, self.question),
            ExampleOrder::QuestionFirst => format!("?{};{}>", self.question, self.context),
        }
    }

    pub fn full_text(&self) -> String {
        format!("{}{}", self.prompt(), self.answer)
    }

    /// `(input, target)` token rows for next-token training. Only the answer
    /// span and the terminating EOS carry loss; everything else is masked
    /// with PAD targets.
    pub fn training_pair(&self) -> (Vec<u32>, Vec<u32>) {
        let prompt_len = self.prompt().len();
        let tokens = tokenizer::tokenize(self.full_text().as_bytes());
        let input = tokens[..tokens.len() - 1].to_vec();
        let mut target = tokens[1..].to_vec();
        // token index of the first answer byte is prompt_len + 1 (BOS shift);
        // target index t predicts token t+1
        for (t, slot) in target.iter_mut().enumerate() {
            let predicted_index = t + 1;
            if predicted_index <= prompt_len {
                *slot = PAD;
            }
        }
        (input, target)
    }
}

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

fn random_word(len: usize, rng: &mut ChaCha8Rng) -> String {
    (0..len)
        .map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())] as char)
        .collect()
}

/// Generate one example: `n_pairs` pairs with mutually distinct keys and
/// values (so the question key and the answer each appear exactly once in the
/// context), shuffled pair order, and a fifty-fifty question-first or
/// context-first layout.
pub fn gen_retrieval(n_pairs: usize, key_len: usize, val_len: usize, seed: u64) -> RetrievalExample {
    assert!(n_pairs >= 1, "need at least one pair");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = HashSet::new();
    let mut fresh = |len: usize, rng: &mut ChaCha8Rng| loop {
        let w = random_word(len, rng);
        if used.insert(w.clone()) {
            return w;
        }
    };
    let mut pairs: Vec<(String, String)> = (0..n_pairs)
        .map(|_| {
            let k = fresh(key_len, &mut rng);
            let v = fresh(val_len, &mut rng);
            (k, v)
        })
        .collect();
    pairs.shuffle(&mut rng);
    let picked = rng.gen_range(0..n_pairs);
    let order = if rng.gen_bool(0.5) {
        ExampleOrder::QuestionFirst
    } else {
        ExampleOrder::ContextFirst
    };
    let context: String = pairs.iter().map(|(k, v)| format!("{k}={v};")).collect();
    RetrievalExample {
        context,
        question: pairs[picked].0.clone(),
        answer: pairs[picked].1.clone(),
        order,
    }
}

/// A dataset of `count` examples; example `i` is generated from stream `i` of
/// the seed, so datasets are stable under changes of `count`.
pub fn gen_dataset(
    count: usize,
    n_pairs: usize,
    key_len: usize,
    val_len: usize,
    seed: u64,
) -> Vec<RetrievalExample> {
    (0..count)
        .map(|i| gen_retrieval(n_pairs, key_len, val_len, seed.wrapping_add(i as u64)))
        .collect()
}

pub fn write_jsonl(path: impl AsRef<Path>, examples: &[RetrievalExample]) -> Result<(), DataError> {
    let mut f = File::create(path)?;
    for ex in examples {
        serde_json::to_writer(&mut f, ex).map_err(|source| DataError::Json { line: 0, source })?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RetrievalExample>, DataError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| DataError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

/// Batches drawn with replacement from a training set, plus a fixed eval set.
pub struct RetrievalBatches {
    train: Vec<(Vec<u32>, Vec<u32>)>,
    eval: Vec<(Vec<u32>, Vec<u32>)>,
}

impl RetrievalBatches {
    pub fn new(train: &[RetrievalExample], eval: &[RetrievalExample]) -> Self {
        RetrievalBatches {
            train: train.iter().map(RetrievalExample::training_pair).collect(),
            eval: eval.iter().map(RetrievalExample::training_pair).collect(),
        }
    }
}

impl BatchSource for RetrievalBatches {
    fn next_batch(&mut self, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<(Vec<u32>, Vec<u32>)> {
        (0..batch_size)
            .map(|_| self.train[rng.gen_range(0..self.train.len())].clone())
            .collect()
    }

    fn eval_set(&self) -> &[(Vec<u32>, Vec<u32>)] {
        &self.eval
    }
}

/// Greedy-decode the answer for one example through the cache engine.
pub fn predict<F: Scalar>(
    model: &Model<F>,
    strategy: &SharingStrategy,
    example: &RetrievalExample,
) -> Result<String, EngineError> {
    let prompt = tokenizer::tokenize_prompt(example.prompt().as_bytes());
    let mut store = CacheStore::new(model.config, strategy.clone())?;
    let generated = greedy_generate(
        model,
        &prompt,
        &mut store,
        example.answer.len() + 1,
        EOS,
    )?;
    let bytes = tokenizer::detokenize(&generated).unwrap_or_default();
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

/// Fraction of examples whose greedy-decoded answer exactly matches the
/// target, decoding under the given sharing strategy.
pub fn exact_match_eval<F: Scalar>(
    model: &Model<F>,
    strategy: &SharingStrategy,
    examples: &[RetrievalExample],
) -> Result<f64, EngineError> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for ex in examples {
        if predict(model, strategy, ex)? == ex.answer {
            hits += 1;
        }
    }
    Ok(hits as f64 / examples.len() as f64)
}
