//! Retrieval-augmented LLM prompting for Chinese to low-resource indigenous
//! language translation, with corpus-level BLEU and chrF++ evaluation.

pub mod corpus;
pub mod embedding;
pub mod http;
pub mod llm;
pub mod metrics;
pub mod orchestrator;
pub mod prompting;
pub mod retrieval;
pub mod tsv;
