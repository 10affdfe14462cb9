mod batch;
mod corpus;
mod vocab;

pub use batch::{batchify, Batch};
pub use corpus::{filter_by_context, make_toy_corpus, read_lines, write_lines, Pair, ParallelCorpus, ToyTask};
pub use vocab::{Vocab, BOS, EOS, PAD, RESERVED, UNK};
