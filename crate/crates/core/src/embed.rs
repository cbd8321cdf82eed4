//! Per-point embedders behind a common trait, selectable by name.

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::jacobian;
use crate::luti::{self, BasisTable, EmbedMode, Table};
use crate::nn::{MlpParams, Mode};
use crate::pipeline::{aggregate_max, GlobalFeature};
use crate::registry::Registry;

const MLP_CHUNK: usize = 4096;

/// Maps points to K-channel embeddings.
pub trait Embedder: Send + Sync {
    fn name(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn embed_into(&self, p: &Point, out: &mut [f64]);

    /// `N × K` embeddings.
    fn embed_points(&self, pts: &[Point]) -> Vec<f64> {
        let k = self.dim();
        let mut out = vec![0.0; pts.len() * k];
        for (p, row) in pts.iter().zip(out.chunks_exact_mut(k)) {
            self.embed_into(p, row);
        }
        out
    }

    /// Channel-wise max over the cloud with the lowest attaining point index.
    fn global_feature(&self, pts: &[Point]) -> Result<GlobalFeature> {
        aggregate_max(&self.embed_points(pts), self.dim())
    }

    /// `∂φ_c/∂p` evaluated at `pts[argmax[c]]` for every channel `c`. `None` when the embedder
    /// has no analytic point derivative.
    fn channel_gradients(&self, _pts: &[Point], _argmax: &[usize]) -> Option<Vec<[f64; 3]>> {
        None
    }
}

/// The embedding MLP evaluated directly.
#[derive(Debug, Clone)]
pub struct MlpEmbedder {
    mlp: Arc<MlpParams>,
}

impl MlpEmbedder {
    pub fn new(mlp: Arc<MlpParams>) -> Result<Self> {
        mlp.validate()?;
        if mlp.input_dim() != 3 {
            return Err(Error::DimensionMismatch {
                expected: 3,
                actual: mlp.input_dim(),
                context: "embedding mlp input",
            });
        }
        Ok(MlpEmbedder { mlp })
    }

    pub fn params(&self) -> &MlpParams {
        &self.mlp
    }
}

impl Embedder for MlpEmbedder {
    fn name(&self) -> &'static str {
        "mlp"
    }

    fn dim(&self) -> usize {
        self.mlp.output_dim()
    }

    fn embed_into(&self, p: &Point, out: &mut [f64]) {
        let cache = self
            .mlp
            .forward_batch(p, 1, Mode::Eval, None)
            .expect("input width checked at construction");
        out.copy_from_slice(cache.output());
    }

    fn embed_points(&self, pts: &[Point]) -> Vec<f64> {
        let forward = |chunk: &[Point]| {
            let flat: Vec<f64> = chunk.iter().flatten().copied().collect();
            self.mlp
                .forward_batch(&flat, chunk.len(), Mode::Eval, None)
                .expect("input width checked at construction")
        };
        if pts.len() <= MLP_CHUNK {
            return forward(pts).into_output();
        }
        let mut out = Vec::with_capacity(pts.len() * self.dim());
        for chunk in pts.chunks(MLP_CHUNK) {
            out.extend_from_slice(forward(chunk).output());
        }
        out
    }

    /// One backward pass per channel, seeded at that channel's argmax point.
    fn channel_gradients(&self, pts: &[Point], argmax: &[usize]) -> Option<Vec<[f64; 3]>> {
        let k = self.dim();
        let mut by_point: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (c, &i) in argmax.iter().enumerate() {
            by_point.entry(i).or_default().push(c);
        }
        let mut out = vec![[0.0; 3]; argmax.len()];
        let mut seed = vec![0.0; k];
        for (i, channels) in by_point {
            let cache = self.mlp.forward_batch(&pts[i], 1, Mode::Eval, None).ok()?;
            for c in channels {
                seed[c] = 1.0;
                let g = self.mlp.input_vjp(&cache, 0, &seed);
                seed[c] = 0.0;
                out[c] = [g[0], g[1], g[2]];
            }
        }
        Some(out)
    }
}

/// A baked table read through one of the interpolation modes.
#[derive(Debug, Clone)]
pub struct TableEmbedder {
    table: Arc<BasisTable>,
    mode: EmbedMode,
}

impl TableEmbedder {
    pub fn new(table: Arc<BasisTable>, mode: EmbedMode) -> Self {
        TableEmbedder { table, mode }
    }

    pub fn table(&self) -> &BasisTable {
        &self.table
    }

    pub fn mode(&self) -> EmbedMode {
        self.mode
    }
}

impl Embedder for TableEmbedder {
    fn name(&self) -> &'static str {
        self.mode.as_str()
    }

    fn dim(&self) -> usize {
        self.table.k()
    }

    fn embed_into(&self, p: &Point, out: &mut [f64]) {
        luti::embed_into(&*self.table, self.mode, p, out);
    }

    fn embed_points(&self, pts: &[Point]) -> Vec<f64> {
        luti::embed_points(&*self.table, self.mode, pts)
    }

    fn global_feature(&self, pts: &[Point]) -> Result<GlobalFeature> {
        if pts.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let (a, argmax_ids) = luti::embed_max(&*self.table, self.mode, pts);
        Ok(GlobalFeature { a, argmax_ids })
    }

    fn channel_gradients(&self, pts: &[Point], argmax: &[usize]) -> Option<Vec<[f64; 3]>> {
        let tbl = &*self.table;
        Some(
            argmax
                .iter()
                .enumerate()
                .map(|(c, &i)| match self.mode {
                    EmbedMode::Uniform => jacobian::channel_gradient_uniform(tbl, &pts[i], c),
                    EmbedMode::Irregular => jacobian::channel_gradient_irregular(tbl, &pts[i], c),
                    // piecewise constant
                    EmbedMode::Nearest => [0.0; 3],
                })
                .collect(),
        )
    }
}

/// What an embedder may be built from.
#[derive(Debug, Clone, Default)]
pub struct EmbedResources {
    pub mlp: Option<Arc<MlpParams>>,
    pub table: Option<Arc<BasisTable>>,
}

pub type EmbedderFactory = fn(&EmbedResources) -> Result<Box<dyn Embedder>>;

fn need_table(res: &EmbedResources) -> Result<Arc<BasisTable>> {
    res.table
        .clone()
        .ok_or_else(|| Error::invalid("this embedder needs a lookup table"))
}

/// `mlp`, `uniform`, `irregular`, `nearest`.
pub fn embedders() -> Registry<EmbedderFactory> {
    Registry::<EmbedderFactory>::new("embedder")
        .with("mlp", |res| {
            let mlp = res
                .mlp
                .clone()
                .ok_or_else(|| Error::invalid("the mlp embedder needs model parameters"))?;
            Ok(Box::new(MlpEmbedder::new(mlp)?))
        })
        .with("uniform", |res| {
            Ok(Box::new(TableEmbedder::new(need_table(res)?, EmbedMode::Uniform)))
        })
        .with("irregular", |res| {
            Ok(Box::new(TableEmbedder::new(need_table(res)?, EmbedMode::Irregular)))
        })
        .with("nearest", |res| {
            Ok(Box::new(TableEmbedder::new(need_table(res)?, EmbedMode::Nearest)))
        })
}

pub fn build_embedder(name: &str, res: &EmbedResources) -> Result<Box<dyn Embedder>> {
    (embedders().get(name)?)(res)
}
