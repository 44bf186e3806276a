//! Cross-modal preference optimisation toolkit: CPO losses, a tabular bigram
//! policy with exact gradients, SMILES parsing and fingerprints, text and
//! molecule metrics, and a QA-based factual-consistency scorer.

pub mod data;
pub mod factual;
pub mod hash;
pub mod policy;
pub mod prefopt;
pub mod smiles;
pub mod textmetrics;
