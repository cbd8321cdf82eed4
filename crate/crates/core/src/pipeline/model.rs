use std::sync::Arc;

use crate::data::PointCloud;
use crate::embed::{Embedder, MlpEmbedder, TableEmbedder};
use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::luti::{self, BasisTable, EmbedMode, NodeStrategy, Table};
use crate::nn::{MlpParams, Mode};

use super::aggregate::GlobalFeature;

/// How a trained model embeds points.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    /// The embedding MLP applied to every point.
    Mlp(MlpParams),
    /// An MLP trained through lattice interpolation; baking it loses nothing.
    Lattice {
        mlp: MlpParams,
        lattice: Lattice,
        mode: EmbedMode,
    },
    /// A fixed table: baked from a frozen MLP or trained directly.
    Table { table: BasisTable, mode: EmbedMode },
}

impl Embedding {
    pub fn dim(&self) -> usize {
        match self {
            Embedding::Mlp(m) | Embedding::Lattice { mlp: m, .. } => m.output_dim(),
            Embedding::Table { table, .. } => table.k(),
        }
    }

    pub fn mode(&self) -> Option<EmbedMode> {
        match self {
            Embedding::Mlp(_) => None,
            Embedding::Lattice { mode, .. } | Embedding::Table { mode, .. } => Some(*mode),
        }
    }

    /// The lookup table this embedding reads at inference, if any.
    pub fn bake(&self) -> Result<Option<BasisTable>> {
        match self {
            Embedding::Mlp(_) => Ok(None),
            Embedding::Lattice { mlp, lattice, .. } => Ok(Some(luti::bake(mlp, lattice)?)),
            Embedding::Table { table, .. } => Ok(Some(table.clone())),
        }
    }

    /// Inference embedder; lattice embeddings are baked once here.
    pub fn embedder(&self) -> Result<Box<dyn Embedder>> {
        Ok(match self {
            Embedding::Mlp(m) => Box::new(MlpEmbedder::new(Arc::new(m.clone()))?),
            Embedding::Lattice { mode, .. } => {
                let table = self.bake()?.expect("lattice embedding bakes");
                Box::new(TableEmbedder::new(Arc::new(table), *mode))
            }
            Embedding::Table { table, mode } => Box::new(TableEmbedder::new(Arc::new(table.clone()), *mode)),
        })
    }

    /// Embeds through the training-time path (no baking).
    pub fn embed_training_path(&self, pts: &[crate::geom::Point]) -> Result<Vec<f64>> {
        match self {
            Embedding::Lattice { mlp, lattice, mode } => {
                Ok(luti::train_forward(mlp, lattice, pts, *mode, NodeStrategy::Auto)?.0)
            }
            other => Ok(other.embedder()?.embed_points(pts)),
        }
    }
}

/// Embedding plus classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub variant: String,
    pub embedding: Embedding,
    pub head: MlpParams,
    pub class_names: Vec<String>,
}

impl Model {
    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        if self.head.input_dim() != self.embedding.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.embedding.dim(),
                actual: self.head.input_dim(),
                context: "head input vs embedding width",
            });
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.head.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.head.output_dim(),
                actual: self.class_names.len(),
                context: "class names vs head outputs",
            });
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_dim()
    }

    /// A model ready for repeated inference.
    pub fn predictor(&self) -> Result<Predictor<'_>> {
        self.validate()?;
        Ok(Predictor {
            model: self,
            embedder: self.embedding.embedder()?,
        })
    }
}

pub struct Predictor<'a> {
    model: &'a Model,
    embedder: Box<dyn Embedder>,
}

impl Predictor<'_> {
    pub fn embedder(&self) -> &dyn Embedder {
        self.embedder.as_ref()
    }

    pub fn global_feature(&self, cloud: &PointCloud) -> Result<GlobalFeature> {
        self.embedder.global_feature(&cloud.points)
    }

    pub fn logits(&self, cloud: &PointCloud) -> Result<Vec<f64>> {
        let g = self.global_feature(cloud)?;
        Ok(self
            .model
            .head
            .forward_batch(&g.a, 1, Mode::Eval, None)?
            .into_output())
    }

    /// Most likely class; ties go to the lowest class id.
    pub fn predict(&self, cloud: &PointCloud) -> Result<usize> {
        Ok(argmax(&self.logits(cloud)?))
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}
