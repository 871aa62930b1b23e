//! Shared fixture setup for the benchmarks.

use structree::doctree::{synth_corpus, synth_vocabulary, DocTree, SynthShape};
use structree::embeddings::EmbeddingStore;
use structree::numerics::rng_from_seed;

pub const EMBED_DIM: usize = 24;

/// A corpus shaped like the desk-scale experiments, with matching vectors.
pub fn corpus_and_store(docs: usize) -> (Vec<DocTree>, EmbeddingStore) {
    let shape = SynthShape { sections: (6, 9), ..Default::default() };
    let mut rng = rng_from_seed(42);
    let corpus = synth_corpus(docs, 4, &shape, &mut rng).expect("synth corpus");
    let store = EmbeddingStore::random(&synth_vocabulary(4), EMBED_DIM, &mut rng);
    (corpus, store)
}
