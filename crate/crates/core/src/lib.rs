//! Question answering over a dietary-supplement knowledge base.
//!
//! The pipeline classifies a question into one of eight types, tags
//! supplement, disease, medication and miscellaneous mentions with a
//! linear-chain CRF, links them to knowledge-base concepts, looks up the
//! relations or attributes that answer the question type, and renders the
//! facts through slot-filling templates.

pub mod classifier;
pub mod corpus;
pub mod dialog;
pub mod eval;
pub mod fixtures;
pub mod kb;
pub mod math;
pub mod ner;
pub mod optim;
pub mod persist;
pub mod textproc;

pub use corpus::{EntitySpan, EntityType, LabeledQuestion, QuestionType, Tag, TagSequence};
pub use textproc::{tokenize, Token};
