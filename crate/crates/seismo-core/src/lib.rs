//! Ground-truth simulation and recurrent surrogate models for single-degree-of-freedom
//! seismic response prediction.
//!
//! The crate is organized around a data-generation / training / evaluation pipeline:
//!
//! * [`excitation`] — synthetic Kanai-Tajimi ground motions, PGA scaling, CSV ingestion,
//!   and response spectra.
//! * [`dynamics`] — linear SDOF and Bouc-Wen hysteretic oscillators integrated under
//!   ground-motion excitation.
//! * [`dataset`] — (ground motion × structure) sample grids, channel normalization,
//!   and a checksummed binary container.
//! * [`network`] — the multi-channel GRU cell with a per-layer structural embedding,
//!   GRU/LSTM baselines, forward evaluation, and exact backpropagation through time.
//! * [`optimizer`] — MSE loss, Adam, and the mini-batch training loop.
//! * [`metrics`] — MSE/MAE/R²/correlation-index reports over physical displacements.

pub mod container;
pub mod dataset;
pub mod dynamics;
pub mod excitation;
pub mod linalg;
pub mod metrics;
pub mod network;
pub mod optimizer;

pub use dataset::{Dataset, DatasetManifest, Normalizer, Sample, TargetMode};
pub use dynamics::{
    BoucWenParams, DampingSpec, InitialConditions, ResponseSeries, StructuralModel,
    StructureParams,
};
pub use excitation::{GroundMotion, KanaiTajimiParams};
pub use metrics::MetricsReport;
pub use network::{CellKind, Model, ModelArch};
pub use optimizer::{AdamState, TrainConfig};
