//! Data generation and ingestion: the byte-level tokenizer, plain-text
//! corpora for LM pretraining, and the synthetic retrieval task.

pub mod corpus;
pub mod retrieval;
pub mod tokenizer;

pub use corpus::{Corpus, CorpusError, LmWindows};
pub use retrieval::{
    exact_match_eval, gen_dataset, gen_retrieval, read_jsonl, write_jsonl, DataError,
    ExampleOrder, RetrievalBatches, RetrievalExample,
};
