//! Error taxonomy shared by every module in the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // Distribution construction.
    #[error("probability entry {value} is negative or non-finite")]
    NegativeEntry { value: f64 },
    #[error("probabilities sum to {sum}, expected 1 within 1e-12")]
    MassMismatch { sum: f64 },
    #[error("categorical distribution needs at least 2 entries, got {len}")]
    TooFewCategories { len: usize },
    #[error("joint table needs at least 2 rows and 2 columns, got {rows}x{cols}")]
    TableTooSmall { rows: usize, cols: usize },
    #[error("joint table row {row} has {found} cells, expected {expected}")]
    RaggedTable {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("{axis} label count {labels} does not match table dimension {dim}")]
    LabelMismatch {
        axis: &'static str,
        labels: usize,
        dim: usize,
    },

    // Conditioning and divergences.
    #[error("spurious column {index} has zero mass")]
    ZeroMassColumn { index: usize },
    #[error("target row {index} has zero mass")]
    ZeroMassRow { index: usize },
    #[error("support mismatch at entry {index}: p > 0 where q = 0, divergence is infinite")]
    SupportMismatch { index: usize },
    #[error("distribution lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("operation requires a 2x2 joint, got {rows}x{cols}")]
    NotBinary { rows: usize, cols: usize },
    #[error("target class {class} has marginal probability 1, phi is undefined")]
    DegenerateMarginal { class: usize },

    // Synthesis.
    #[error("infeasible bias configuration: cell (target {target}, spurious {spurious}) would be negative")]
    InfeasibleConfig { target: usize, spurious: usize },
    #[error("unknown preset {name:?}, expected one of lmlp, lmlp', hmlp, hmhp, unbiased")]
    UnknownPreset { name: String },
    #[error("invalid feature layout: {reason}")]
    InvalidLayout { reason: String },
    #[error("invalid bias configuration: {reason}")]
    InvalidConfig { reason: String },

    // Simulation.
    #[error("input has dimension {found}, expected {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid parameters: {reason}")]
    InvalidParams { reason: String },
    #[error("non-finite loss at training step {step}")]
    NonFiniteLoss { step: u64 },

    // Ingestion and serialization.
    #[error("column {name:?} not found in input")]
    MissingColumn { name: String },
    #[error("no data rows in {}", path.display())]
    EmptyFile { path: PathBuf },
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("parse failure: {detail}")]
    ParseFailure { detail: String },
}
