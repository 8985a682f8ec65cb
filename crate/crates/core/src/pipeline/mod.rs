//! End-to-end orchestration: model building, dataset generation, pose–shape
//! refinement, sequence tracking, evaluation and overlays.
//!
//! The refinement search vector is `[t (mm), Euler XYZ (deg), α]`, boxed to
//! the configured half-widths around the initial pose; shape coefficients are
//! boxed absolutely. Rigid-only runs drop `α` and keep the shape at zero.

pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod model;
pub mod overlay;
pub mod refine;
pub mod synthetic;
pub mod track;

pub use config::{IcpConfig, PathsConfig, RefineConfig, RunConfig, SamplingConfig};
pub use dataset::{generate_dataset, generate_dataset_cmd, DatasetManifest};
pub use evaluate::{evaluate_records, EvalMetrics, FrameTre};
pub use model::{build_from_corpus, build_shape_model_cmd, fit_corpus_mesh};
pub use overlay::{render_overlay, save_overlay};
pub use refine::{load_records, refine, refine_cmd, save_records, FrameMetrics, FrameRecord, ParamLayout, Refinement};
pub use track::{refine_frame, track_sequence, track_sequence_cmd};
