//! Toolkit for the argument reasoning comprehension task.
//!
//! Given a reason and a claim, the task is to pick the correct implicit
//! warrant out of two candidates. The crate covers the data side (crowd
//! label aggregation, agreement measures, the split-crowd reliability
//! curves and the eight-step warrant reconstruction workflow) and the
//! modelling side (random baseline, a Modified Kneser-Ney language model and
//! BiLSTM attention models trained on a small reverse-mode autodiff kernel).
//!
//! Modules map one-to-one onto the toolkit's components:
//!
//! * [`corpus`]: debates, task instances, TSV/JSONL I/O and year-based splits.
//! * [`crowd`]: worker responses, majority vote and the MACE competence model.
//! * [`agreement`]: Cohen's kappa and Krippendorff's alpha (nominal and unitized).
//! * [`reliability`]: time-split "experts from the crowd" and agreement curves.
//! * [`pipeline`]: the step-by-step reconstruction workflow over response files.
//! * [`lm`]: Modified Kneser-Ney n-gram model and the warrant decision rule.
//! * [`neural`]: attention and intra-warrant attention classifiers.
//! * [`eval`]: accuracy, random baseline and result tables.

pub mod agreement;
pub mod corpus;
pub mod crowd;
pub mod eval;
pub mod lm;
pub mod neural;
pub mod pipeline;
pub mod reliability;
pub mod text;

pub use corpus::{DataSplit, Debate, TaskInstance};
pub use crowd::{AggregationConfig, WorkerModel, WorkerResponse};
