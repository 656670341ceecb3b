//! Condition-aware polymer property regression from literature-style text.
//!
//! The pipeline runs from raw measurement documents to trained multi-task
//! regressors:
//!
//! * [`extract`] pulls property observations out of sample-delimited text,
//!   normalizing units through [`units`] and heads through [`registry`];
//!   [`audit`] scores an extraction against hand annotations.
//! * [`prompt`] turns samples into `[Sample]`/`[Synthesis]` prompts with
//!   target values scrubbed from the text.
//! * [`encoder`], [`regressor`] and [`objective`] define the model and the
//!   density-weighted, uncertainty-balanced loss; [`model`] ties them
//!   together with exact gradients and [`trainer`] fits them.
//! * [`metrics`] scores predictions; [`synth`] and [`experiments`] generate
//!   controlled corpora and run the ablation and uncertainty studies.

pub mod audit;
pub mod checkpoint;
pub mod config;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod extract;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod prompt;
pub mod quantity;
pub mod registry;
pub mod regressor;
pub mod synth;
pub mod trainer;
pub mod tsv;
pub mod units;

pub use error::{Error, Result};
pub use registry::{HeadId, PropertySpec, Registry, NUM_HEADS};
