//! Core of the psykit pipeline: text ingestion into a memory-mapped store,
//! TF-IDF features, a reverse-mode autodiff engine, baseline and neural
//! regressors with a bounded sigmoid head, LoRA and 4-bit quantization, a
//! resumable trainer, and a persona-conditioned toy language model.

pub mod autodiff;
pub mod corpus;
pub mod features;
pub mod models;
pub mod par;
pub mod persona;
pub mod trainer;
