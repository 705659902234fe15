//! Toolkit for measuring the steganographic capacity of trained learning models.
//!
//! A trained model's 32-bit weights tolerate a surprising amount of low-order
//! bit damage before its accuracy degrades. This crate packages everything
//! needed to measure that tolerance end to end:
//!
//! * [`weightstore`] — a bit-exact on-disk weight format (WSTG) plus layer
//!   selectors that pick which tensors act as cover media.
//! * [`stegocodec`] — overwrites the `n` low-order bits of selected weights
//!   with payload data, in a measurement mode (fill everything) and a framed,
//!   recoverable message mode.
//! * [`corpus`] — a synthetic 10-family byte corpus and the byte-histogram,
//!   byte-image, and byte-sequence featurizers.
//! * [`models`] — from-scratch multinomial logistic regression, linear
//!   one-vs-rest SVM, and MLP trainers with grid search and lossless weight
//!   export/import.
//! * [`sweeper`] — the accuracy-vs-`n` sweep harness, the 1%-drop capacity
//!   rule, capacity arithmetic, and CSV/report emitters.

pub mod corpus;
pub mod models;
pub mod rng;
pub mod stegocodec;
pub mod sweeper;
pub mod weightstore;
