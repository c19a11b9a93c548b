//! Grassmann distribution over categorical and ordinal variables.

pub mod error;
pub mod factor;
pub mod fit;
pub mod grassmann;
pub mod linalg;
pub mod mixed;
pub mod optim;
pub mod oracle;
pub mod sampling;
pub mod scalar;
pub mod schema;
pub mod structured;

pub use error::{Error, Result};
pub use grassmann::{GrassmannParams, IndexPartition, P0Report};
pub use linalg::Matrix;
pub use mixed::{MixedModel, MixedParams, MixedPartition};
pub use oracle::{brute_force_table, FullTable};
pub use sampling::StateSampler;
pub use scalar::Real;
pub use schema::{DummyState, Record, VariableDecl, VariableKind, VariableSchema};
pub use structured::StructuredParams;

pub type Matrix64 = Matrix<f64>;
pub type GrassmannParams64 = GrassmannParams<f64>;
pub type StructuredParams64 = StructuredParams<f64>;
pub type MixedParams64 = MixedParams<f64>;
pub type MixedModel64 = MixedModel<f64>;
pub type FullTable64 = FullTable<f64>;
