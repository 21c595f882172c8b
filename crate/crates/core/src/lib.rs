//! Hybrid eligibility-criteria engine for cohort selection from clinical
//! notes: weak supervision over trigger-rule silver standards, terminology
//! matching under context/section/temporal constraints, rule and threshold
//! extraction, and a challenge-style evaluation harness.

pub mod context;
pub mod corpus;
pub mod criteria;
pub mod learn;
pub mod lexvar;
pub mod metrics;
pub mod rules;
pub mod sections;
pub mod silver;
pub mod temporal;

pub use corpus::{Document, Label, PatientRecord, Sentence, Token};
pub use criteria::{Decision, Evidence};
pub use metrics::{LabeledPair, MetricsReport};
