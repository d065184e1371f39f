//! OTFS frame-synchronization workbench: frame construction, channel
//! simulation, labelled capture datasets, correlation baselines and a
//! two-stage residual CNN synchronizer.

pub mod channel;
pub mod classic;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frame;
pub mod nn;
pub mod pipeline;
pub mod sync;

pub use error::{Error, Result};
pub use frame::{DdGrid, DtGrid, FrameConfig, Grid, PilotConfig, TimeSignal};
pub use sync::{StageScores, SyncEstimate};
