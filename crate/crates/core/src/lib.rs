//! Entity linking with LLM-generated context augmentation.
//!
//! The pipeline has three stages. An LLM writes a mention-centered
//! description for every mention ([`gateway`]), the description is joined
//! with the original document under one of five joining strategies
//! ([`fusion`]), and an entity linker resolves the mention inside the joined
//! text ([`linker`]). Predictions from several systems can be combined by
//! voting ([`ensemble`]) and scored against gold labels ([`eval`]).

pub mod ensemble;
pub mod eval;
pub mod fusion;
pub mod gateway;
pub mod io;
pub mod linker;
pub mod model;
pub mod par;
pub mod pipeline;

pub use model::{Dataset, Entity, KnowledgeBase, MentionContext, MentionKey, NIL_ENTITY_ID};
