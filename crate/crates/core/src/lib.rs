//! Lattice-interpolated point embeddings for fast global point-cloud features.

pub mod bench;
pub mod data;
pub mod embed;
pub mod error;
pub mod geom;
pub mod io;
pub mod jacobian;
pub mod lattice;
mod linalg;
pub mod luti;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod registration;
pub mod registry;
mod simd;

pub use error::{Error, Result};
pub use geom::{Point, RigidTransform, Twist};
pub use lattice::Lattice;
pub use luti::{BasisTable, DirectTable, EmbedMode, Table};
pub use nn::MlpParams;
