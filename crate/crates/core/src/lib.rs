//! Distributed sparse matrix-vector products for wide (`m << n`) unstructured
//! matrices using nonzero-based partitioning.
//!
//! The `Z` nonzeros of a column-major matrix are split into `P` contiguous,
//! near-equal chunks, one per rank. A column whose nonzeros straddle a chunk
//! boundary becomes an *overlap zone*: every rank touching it stores a
//! replica of the matching `n`-vector coefficient. `y = A x` needs one
//! `P`-wide sum of length-`m` partial products; `u^T = v^T A` needs one
//! scalar reduction per overlap zone, scheduled as all even zones then all
//! odd zones. The zone groups themselves are discovered with one neighbor
//! exchange and three scans, so setup costs `O(log P)` rounds.
//!
//! Ranks run on an in-process harness ([`comm`]) with blocking collectives,
//! deterministic reduction order and round/message accounting.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the `*64`
//! aliases at the crate root fix the common double-precision case.

pub mod comm;
pub mod engine;
pub mod matgen;
pub mod matio;
pub mod partition;
pub mod sparse;
pub mod zone_setup;

mod error;
mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub use comm::{run_ranks, CommError, Endpoint, GroupHandle, Parity, SegPair, Traffic};
pub use engine::{
    ColpEngine, DistributedOperator, EngineStats, Mode, NzpEngine, OverlappedSlice,
    OverlappedVector, WrapReport,
};
pub use matgen::GenParams;
pub use partition::{ChunkBounds, ColumnPartition, Cover, ImbalanceReport, OverlapZone};
pub use sparse::{CooMatrix, CscMatrix, DenseOracle, DenseVector, Triple};
pub use zone_setup::{BoundaryColumns, SetupVars, ZoneMembership, ZoneRef, ZoneSetup};

pub type Triple64 = Triple<f64>;
pub type CooMatrix64 = CooMatrix<f64>;
pub type CscMatrix64 = CscMatrix<f64>;
pub type NzpEngine64 = NzpEngine<f64>;
pub type ColpEngine64 = ColpEngine<f64>;
pub type OverlappedSlice64 = OverlappedSlice<f64>;
pub type OverlappedVector64 = OverlappedVector<f64>;

pub type CooMatrix32 = CooMatrix<f32>;
pub type CscMatrix32 = CscMatrix<f32>;
