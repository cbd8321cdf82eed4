//! Point-space and pose-space derivatives of embeddings and global features.
//!
//! Pose Jacobians use the convention of the finite-difference form
//! `J_k = [max φ(exp(-t e_k)·P) - max φ(P)] / t`, so the analytic version carries a minus sign:
//! `row_c = -∂φ_c/∂p(p*) · ∂(exp(ξ)p)/∂ξ |_{p*}` with `p*` the argmax point of channel `c`.

use nalgebra::DMatrix;

use crate::embed::{Embedder, MlpEmbedder};
use crate::error::{Error, Result};
use crate::geom::{point_pose_jacobian, se3_exp, transform_points, Point, Twist};
use crate::lattice::{trilinear_weights, Lattice};
use crate::luti::{blend, Table};
use crate::nn::MlpParams;
use crate::registry::Registry;

/// Default finite-difference step.
pub const DEFAULT_FDM_STEP: f64 = 1e-2;

/// `K × 3` matrix `∂φ(p)/∂p`, one row per channel.
pub type EmbedJacobian = Vec<[f64; 3]>;

/// `K × 6` matrix `∂a/∂ξ` with twist order `(ω, v)`.
pub type GlobalJacobian = DMatrix<f64>;

/// Corner ids with the partial derivatives of the 8 trilinear weights along each axis,
/// already scaled by `1/h`. Axes where `p` lies outside the domain get zero derivative.
fn derivative_weights(lat: &Lattice, p: &Point) -> ([usize; 8], [f64; 8], [[f64; 8]; 3]) {
    let c = lat.locate(p);
    let ids = lat.corner_ids(&c);
    let w = trilinear_weights(&c);
    let h = lat.spacing();
    let (lo, hi) = (lat.lo(), lat.hi());
    let [ux, uy, uz] = c.frac;
    let lin = |u: f64| [1.0 - u, u];
    let (wx, wy, wz) = (lin(ux), lin(uy), lin(uz));
    let sign = [-1.0, 1.0];
    let mut dw = [[0.0; 8]; 3];
    for j in 0..8 {
        let (bx, by, bz) = (j >> 2, (j >> 1) & 1, j & 1);
        dw[0][j] = sign[bx] * wy[by] * wz[bz] / h[0];
        dw[1][j] = wx[bx] * sign[by] * wz[bz] / h[1];
        dw[2][j] = wx[bx] * wy[by] * sign[bz] / h[2];
    }
    for a in 0..3 {
        if p[a] < lo[a] || p[a] > hi[a] {
            dw[a] = [0.0; 8];
        }
    }
    (ids, w, dw)
}

/// Uniform-mode point Jacobian: bilinearly weighted corner differences scaled by `1/h`.
pub fn dphi_dp_uniform<T: Table + ?Sized>(tbl: &T, p: &Point) -> EmbedJacobian {
    let k = tbl.k();
    let (ids, _, dw) = derivative_weights(tbl.lattice(), p);
    let rows = ids.map(|id| tbl.row(id));
    let mut cols = vec![vec![0.0; k]; 3];
    for a in 0..3 {
        blend(rows, &dw[a], &mut cols[a]);
    }
    (0..k).map(|c| [cols[0][c], cols[1][c], cols[2][c]]).collect()
}

/// Irregular-mode point Jacobian: row `c` comes from whichever of channels `c` and `K-1-c`
/// won the minimum (channel `c` on ties).
pub fn dphi_dp_irregular<T: Table + ?Sized>(tbl: &T, p: &Point) -> EmbedJacobian {
    let k = tbl.k();
    let (ids, w, _) = derivative_weights(tbl.lattice(), p);
    let mut z = vec![0.0; k];
    blend(ids.map(|id| tbl.row(id)), &w, &mut z);
    let uni = dphi_dp_uniform(tbl, p);
    (0..k)
        .map(|c| if z[c] <= z[k - 1 - c] { uni[c] } else { uni[k - 1 - c] })
        .collect()
}

fn channel_value(tbl: &(impl Table + ?Sized), ids: &[usize; 8], w: &[f64; 8], c: usize) -> f64 {
    // same operation order as `blend`, so ties resolve identically
    let mut acc = w[0] * tbl.row(ids[0])[c];
    for j in 1..8 {
        acc = w[j].mul_add(tbl.row(ids[j])[c], acc);
    }
    acc
}

/// Row `c` of [`dphi_dp_uniform`] without computing the others.
pub fn channel_gradient_uniform<T: Table + ?Sized>(tbl: &T, p: &Point, c: usize) -> [f64; 3] {
    let (ids, _, dw) = derivative_weights(tbl.lattice(), p);
    [0, 1, 2].map(|a| channel_value(tbl, &ids, &dw[a], c))
}

/// Row `c` of [`dphi_dp_irregular`] without computing the others.
pub fn channel_gradient_irregular<T: Table + ?Sized>(tbl: &T, p: &Point, c: usize) -> [f64; 3] {
    let k = tbl.k();
    let (ids, w, dw) = derivative_weights(tbl.lattice(), p);
    let r = k - 1 - c;
    let src = if channel_value(tbl, &ids, &w, c) <= channel_value(tbl, &ids, &w, r) {
        c
    } else {
        r
    };
    [0, 1, 2].map(|a| channel_value(tbl, &ids, &dw[a], src))
}

fn require_points(pts: &[Point]) -> Result<()> {
    if pts.is_empty() {
        Err(Error::EmptyCloud)
    } else {
        Ok(())
    }
}

/// Analytic pose Jacobian of the max-pooled feature.
pub fn dglobal_dxi_analytic(emb: &dyn Embedder, pts: &[Point]) -> Result<GlobalJacobian> {
    require_points(pts)?;
    let k = emb.dim();
    let g = emb.global_feature(pts)?;
    let grads = emb
        .channel_gradients(pts, &g.argmax_ids)
        .ok_or_else(|| Error::invalid(format!("embedder `{}` has no analytic gradient", emb.name())))?;
    let mut j = DMatrix::zeros(k, 6);
    for c in 0..k {
        let pj = point_pose_jacobian(&pts[g.argmax_ids[c]]);
        let gc = grads[c];
        for col in 0..6 {
            j[(c, col)] = -(gc[0] * pj[(0, col)] + gc[1] * pj[(1, col)] + gc[2] * pj[(2, col)]);
        }
    }
    Ok(j)
}

/// Forward-difference pose Jacobian from six perturbed embeddings.
pub fn dglobal_dxi_fdm(emb: &dyn Embedder, pts: &[Point], t: f64) -> Result<GlobalJacobian> {
    require_points(pts)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {t}")));
    }
    let k = emb.dim();
    let base = emb.global_feature(pts)?.a;
    let mut j = DMatrix::zeros(k, 6);
    for col in 0..6 {
        let warped = transform_points(&se3_exp(&Twist::basis(col, -t)), pts);
        let a = emb.global_feature(&warped)?.a;
        for c in 0..k {
            j[(c, col)] = (a[c] - base[c]) / t;
        }
    }
    Ok(j)
}

/// Analytic pose Jacobian evaluated through the MLP itself, one backward pass per channel.
pub fn mlp_analytic_jacobian(mlp: &MlpParams, pts: &[Point]) -> Result<GlobalJacobian> {
    let emb = MlpEmbedder::new(std::sync::Arc::new(mlp.clone()))?;
    dglobal_dxi_analytic(&emb, pts)
}

/// A way of computing the pose Jacobian of the global feature.
pub trait PoseJacobian: Send + Sync {
    fn name(&self) -> &'static str;
    fn compute(&self, emb: &dyn Embedder, pts: &[Point]) -> Result<GlobalJacobian>;
}

#[derive(Debug, Clone, Copy)]
pub struct FiniteDifference {
    pub step: f64,
}

impl PoseJacobian for FiniteDifference {
    fn name(&self) -> &'static str {
        "fdm"
    }
    fn compute(&self, emb: &dyn Embedder, pts: &[Point]) -> Result<GlobalJacobian> {
        dglobal_dxi_fdm(emb, pts, self.step)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Analytic;

impl PoseJacobian for Analytic {
    fn name(&self) -> &'static str {
        "analytic"
    }
    fn compute(&self, emb: &dyn Embedder, pts: &[Point]) -> Result<GlobalJacobian> {
        dglobal_dxi_analytic(emb, pts)
    }
}

/// Builds a strategy given the finite-difference step.
pub type PoseJacobianFactory = fn(f64) -> Result<Box<dyn PoseJacobian>>;

/// `fdm`, `analytic`.
pub fn pose_jacobians() -> Registry<PoseJacobianFactory> {
    Registry::<PoseJacobianFactory>::new("jacobian")
        .with("fdm", |step| {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::invalid(format!("finite-difference step must be positive, got {step}")));
            }
            Ok(Box::new(FiniteDifference { step }))
        })
        .with("analytic", |_| Ok(Box::new(Analytic)))
}
