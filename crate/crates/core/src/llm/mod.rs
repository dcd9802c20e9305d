//! Frozen language-model branch: text serialization, GPT-2 byte-level BPE,
//! the transformer forward pass and pooled features.

pub mod bpe;
pub mod cache;
pub mod features;
pub mod gpt2;
pub mod serialize;

pub use bpe::{bpe_detokenize, bpe_tokenize, BpeVocab};
pub use cache::FeatureCache;
pub use features::{llm_features, llm_features_all, LlmBranchConfig};
pub use gpt2::{gpt2_forward, Gpt2Config, Gpt2Weights};
pub use serialize::{serialize_series, SerializationConfig};
