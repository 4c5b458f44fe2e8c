//! Quantify how well probabilistic classifiers know what they don't know.
//!
//! `shiftbench` trains small reference classifiers (plain MLPs, MC-dropout,
//! deep ensembles, mean-field variational nets and their last-layer
//! variants), perturbs their inputs with controlled shifts (rotation, cyclic
//! translation, blur, pixel noise, categorical token randomization), and
//! scores the predictive distributions with proper scoring rules,
//! calibration metrics and confidence diagnostics.
//!
//! The `examples/` directory is the front door; each example is a runnable
//! tour of one capability:
//!
//! ```text
//! cargo run --release --example metrics_tour        # scoring rules, ECE, Brier decomposition
//! cargo run --release --example prediction_files    # the CSV + manifest on-disk format
//! cargo run --release --example shift_gallery       # every shift operator on one image
//! cargo run --release --example train_mlp           # from-scratch training loop
//! cargo run --release --example temperature         # post-hoc temperature scaling
//! cargo run --release --example deep_ensemble       # ensembling and the size study
//! cargo run --release --example mc_dropout          # Monte-Carlo dropout sampling
//! cargo run --release --example svi_mlp             # mean-field variational training
//! cargo run --release --example rotation_sweep      # accuracy/Brier under rotation shift
//! cargo run --release --example ood_entropy         # entropy diagnostics on OOD inputs
//! cargo run --release --example categorical_shift   # tabular AUC under token randomization
//! ```
//!
//! The same pipeline is scriptable through the `shiftbench` binary
//! (`train`, `predict`, `shift`, `eval`, `report`, `size-study` subcommands,
//! each driven by a JSON config).

pub mod aggregate;
pub mod calibrate;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod models;
pub mod seeds;
pub mod shift;

pub use error::{Error, Result};
