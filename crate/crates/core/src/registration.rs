//! Inverse-compositional rigid registration on max-pooled embeddings.
//!
//! The Jacobian is computed once from the target cloud. Each iteration embeds the currently
//! warped source, forms `r = a(G·P_S) - a(P_T)`, solves `Δξ = J⁺ r` and updates `G ← exp(Δξ)·G`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embed::{build_embedder, EmbedResources, Embedder};
use crate::error::{Error, Result};
use crate::geom::{se3_exp, transform_points, Point, RigidTransform, Twist};
use crate::jacobian::{pose_jacobians, PoseJacobian, DEFAULT_FDM_STEP};
use crate::luti::EmbedMode;

/// Relative singular-value cutoff of [`pseudoinverse`].
pub const PINV_RCOND: f64 = 1e-10;
/// Tikhonov damping used when the Jacobian is rank deficient.
pub const DAMPING: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JacMode {
    FdmMlp,
    FdmLuti,
    AnalyticLuti,
}

impl JacMode {
    pub const ALL: [JacMode; 3] = [JacMode::FdmMlp, JacMode::FdmLuti, JacMode::AnalyticLuti];

    pub fn as_str(&self) -> &'static str {
        match self {
            JacMode::FdmMlp => "fdm-mlp",
            JacMode::FdmLuti => "fdm-luti",
            JacMode::AnalyticLuti => "analytic-luti",
        }
    }

    /// Name of the pose-Jacobian strategy.
    pub fn jacobian(&self) -> &'static str {
        match self {
            JacMode::FdmMlp | JacMode::FdmLuti => "fdm",
            JacMode::AnalyticLuti => "analytic",
        }
    }

    /// Name of the embedder, given the table's interpolation mode.
    pub fn embedder(&self, mode: EmbedMode) -> &'static str {
        match self {
            JacMode::FdmMlp => "mlp",
            JacMode::FdmLuti | JacMode::AnalyticLuti => mode.as_str(),
        }
    }
}

impl fmt::Display for JacMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JacMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('_', "-");
        JacMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| Error::UnknownName {
                kind: "jacobian mode",
                name: s.to_string(),
                known: "fdm-mlp, fdm-luti, analytic-luti".into(),
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegistrationConfig {
    pub max_iter: usize,
    pub stop_tol: f64,
    pub jac_mode: JacMode,
    pub fdm_step: f64,
    pub embed_mode: EmbedMode,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            max_iter: 10,
            stop_tol: 1e-7,
            jac_mode: JacMode::AnalyticLuti,
            fdm_step: DEFAULT_FDM_STEP,
            embed_mode: EmbedMode::Irregular,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.stop_tol >= 0.0) {
            return Err(Error::invalid("stop_tol must be non-negative"));
        }
        if self.jac_mode.jacobian() == "fdm" && !(self.fdm_step > 0.0 && self.fdm_step.is_finite()) {
            return Err(Error::invalid(format!(
                "finite-difference step must be positive, got {}",
                self.fdm_step
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Estimated transform taking the source onto the target.
    pub g_est: RigidTransform,
    /// `‖r‖` at the start of each iteration.
    pub residual_norms: Vec<f64>,
    pub iterations_used: usize,
    pub converged: bool,
    /// The Jacobian was rank deficient and a damped inverse was used.
    pub damped: bool,
}

/// Moore-Penrose inverse via SVD, zeroing singular values below `1e-10 · σ_max`.
pub fn pseudoinverse(j: &DMatrix<f64>) -> DMatrix<f64> {
    pinv_with_rank(j).0
}

fn pinv_with_rank(j: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (rows, cols) = j.shape();
    if rows == 0 || cols == 0 {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let svd = j.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) {
        return (DMatrix::zeros(cols, rows), 0);
    }
    let cutoff = PINV_RCOND * smax;
    let u = svd.u.as_ref().expect("requested u");
    let vt = svd.v_t.as_ref().expect("requested v_t");
    let mut out = DMatrix::zeros(cols, rows);
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            rank += 1;
            out += vt.row(i).transpose() * u.column(i).transpose() / s;
        }
    }
    (out, rank)
}

/// `(JᵀJ + λI)⁻¹ Jᵀ`.
pub fn damped_pseudoinverse(j: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let n = j.ncols();
    let jt = j.transpose();
    let a = &jt * j + DMatrix::identity(n, n) * lambda;
    match a.cholesky() {
        Some(c) => c.solve(&jt),
        None => pseudoinverse(j),
    }
}

/// Solver inverse for `J`: the SVD pseudoinverse at full column rank, the damped inverse
/// otherwise. The flag reports whether damping was used.
pub fn solver_inverse(j: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let (pinv, rank) = pinv_with_rank(j);
    if rank < j.ncols() {
        (damped_pseudoinverse(j, DAMPING), true)
    } else {
        (pinv, false)
    }
}

fn global_feature(emb: &dyn Embedder, pts: &[Point]) -> Result<DVector<f64>> {
    let g = emb.global_feature(pts)?;
    Ok(DVector::from_vec(g.a))
}

/// Registration with explicit strategy objects.
pub fn register_with(
    emb: &dyn Embedder,
    jac: &dyn PoseJacobian,
    source: &[Point],
    target: &[Point],
    max_iter: usize,
    stop_tol: f64,
) -> Result<RegistrationResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if max_iter == 0 {
        return Err(Error::invalid("max_iter must be at least 1"));
    }
    let j = jac.compute(emb, target)?;
    let (jinv, damped) = solver_inverse(&j);
    let a_t = global_feature(emb, target)?;
    let mut g = RigidTransform::identity();
    let mut residual_norms = Vec::with_capacity(max_iter);
    let mut converged = false;
    let mut iterations_used = 0;
    for _ in 0..max_iter {
        let warped = transform_points(&g, source);
        let r = global_feature(emb, &warped)? - &a_t;
        residual_norms.push(r.norm());
        let dxi = &jinv * r;
        iterations_used += 1;
        let step = Twist([dxi[0], dxi[1], dxi[2], dxi[3], dxi[4], dxi[5]]);
        if !step.is_finite() {
            return Err(Error::invalid("registration step is not finite"));
        }
        g = se3_exp(&step).compose(&g);
        if step.norm() < stop_tol {
            converged = true;
            break;
        }
    }
    Ok(RegistrationResult {
        g_est: g,
        residual_norms,
        iterations_used,
        converged,
        damped,
    })
}

/// Registers `source` onto `target`, choosing embedder and Jacobian from `cfg.jac_mode`.
pub fn register(
    res: &EmbedResources,
    source: &[Point],
    target: &[Point],
    cfg: &RegistrationConfig,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let emb = build_embedder(cfg.jac_mode.embedder(cfg.embed_mode), res)?;
    let jac = (pose_jacobians().get(cfg.jac_mode.jacobian())?)(cfg.fdm_step)?;
    register_with(emb.as_ref(), jac.as_ref(), source, target, cfg.max_iter, cfg.stop_tol)
}

/// One line of a registration benchmark.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub jac: String,
    pub init_rot_deg: f64,
    pub init_trans: f64,
    pub final_rot_deg: f64,
    pub final_trans: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_ms: f64,
}

impl TrialRecord {
    pub fn success(&self, max_rot_deg: f64, max_trans: f64) -> bool {
        self.final_rot_deg < max_rot_deg && self.final_trans < max_trans
    }
}

/// Warps `cloud` by a random transform drawn from `seed` and registers it back.
pub fn run_trial(
    res: &EmbedResources,
    cloud: &[Point],
    seed: u64,
    max_angle: f64,
    max_trans: f64,
    cfg: &RegistrationConfig,
) -> Result<TrialRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let truth = RigidTransform::random(&mut rng, max_angle, max_trans);
    let target = transform_points(&truth, cloud);
    let start = Instant::now();
    let out = register(res, cloud, &target, cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let (rot, trans) = out.g_est.error_to(&truth);
    Ok(TrialRecord {
        seed,
        jac: cfg.jac_mode.to_string(),
        init_rot_deg: truth.rotation_angle().to_degrees(),
        init_trans: truth.translation.norm(),
        final_rot_deg: rot.to_degrees(),
        final_trans: trans,
        iterations: out.iterations_used,
        converged: out.converged,
        wall_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::MlpEmbedder;
    use crate::jacobian::{Analytic, GlobalJacobian};
    use crate::nn::init_params;
    use rand::Rng;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    #[test]
    fn pseudoinverse_of_stacked_identity() {
        let mut j = DMatrix::zeros(9, 6);
        for i in 0..6 {
            j[(i, i)] = 1.0;
        }
        let p = pseudoinverse(&j);
        assert_eq!(p.shape(), (6, 9));
        for r in 0..6 {
            for c in 0..9 {
                let e = if r == c { 1.0 } else { 0.0 };
                assert!((p[(r, c)] - e).abs() < 1e-14);
            }
        }
        assert_eq!(pseudoinverse(&DMatrix::zeros(5, 6)), DMatrix::zeros(6, 5));
    }

    #[test]
    fn pseudoinverse_matches_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let j = DMatrix::from_fn(12, 6, |_, _| rng.random::<f64>() - 0.5);
            let p = pseudoinverse(&j);
            let jt = j.transpose();
            let oracle = (&jt * &j).try_inverse().unwrap() * jt;
            assert!((&p - &oracle).norm() < 1e-9 * oracle.norm());
            assert!((&j * &p * &j - &j).norm() <= 1e-8 * j.norm());
            assert!(!solver_inverse(&j).1);
        }
    }

    #[test]
    fn rank_deficient_jacobian_is_damped() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut j = DMatrix::from_fn(10, 6, |_, _| rng.random::<f64>());
        j.column_mut(5).fill(0.0);
        let (inv, damped) = solver_inverse(&j);
        assert!(damped);
        assert!(inv.iter().all(|v| v.is_finite()));
        assert!((&j * pseudoinverse(&j) * &j - &j).norm() <= 1e-8 * j.norm());
    }

    struct Counting<'a>(&'a AtomicUsize);

    impl PoseJacobian for Counting<'_> {
        fn name(&self) -> &'static str {
            "counting"
        }
        fn compute(&self, emb: &dyn Embedder, pts: &[Point]) -> Result<GlobalJacobian> {
            self.0.fetch_add(1, Ordering::SeqCst);
            Analytic.compute(emb, pts)
        }
    }

    fn cloud(n: usize, seed: u64) -> Vec<Point> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = [0; 3].map(|_| rng.random::<f64>() - 0.5);
                [v[0], v[1] * 0.6, v[2] * 0.3]
            })
            .collect()
    }

    #[test]
    fn jacobian_is_computed_once() {
        let emb = MlpEmbedder::new(Arc::new(init_params(&[3, 32, 32], false, 5))).unwrap();
        let calls = AtomicUsize::new(0);
        let src = cloud(64, 1);
        let tgt = transform_points(&se3_exp(&Twist([0.05, 0.0, 0.02, 0.01, 0.0, 0.0])), &src);
        let out = register_with(&emb, &Counting(&calls), &src, &tgt, 10, 0.0).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(out.iterations_used, 10);
        assert_eq!(out.residual_norms.len(), 10);
    }

    #[test]
    fn identity_problem_converges_immediately() {
        let mlp = Arc::new(init_params(&[3, 32, 32], false, 6));
        let res = EmbedResources {
            mlp: Some(mlp.clone()),
            table: Some(Arc::new(
                crate::luti::bake(&mlp, &crate::lattice::Lattice::new(4).unwrap()).unwrap(),
            )),
        };
        let src = cloud(50, 2);
        for jac_mode in JacMode::ALL {
            let cfg = RegistrationConfig {
                jac_mode,
                ..Default::default()
            };
            let out = register(&res, &src, &src, &cfg).unwrap();
            assert!(out.converged);
            assert!(out.iterations_used <= 1);
            assert!(out.residual_norms[0] < 1e-9);
            let (rot, trans) = out.g_est.error_to(&RigidTransform::identity());
            assert!(rot < 1e-9 && trans < 1e-9);
        }
    }

    #[test]
    fn config_validation_and_mode_parsing() {
        let bad = RegistrationConfig {
            max_iter: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = RegistrationConfig {
            jac_mode: JacMode::FdmLuti,
            fdm_step: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        for m in JacMode::ALL {
            assert_eq!(m.as_str().parse::<JacMode>().unwrap(), m);
        }
        assert_eq!("analytic_luti".parse::<JacMode>().unwrap(), JacMode::AnalyticLuti);
        assert!("analytic-mlp".parse::<JacMode>().is_err());
    }

    #[test]
    fn empty_clouds_are_rejected() {
        let res = EmbedResources {
            mlp: Some(Arc::new(init_params(&[3, 8], false, 1))),
            table: None,
        };
        let cfg = RegistrationConfig {
            jac_mode: JacMode::FdmMlp,
            ..Default::default()
        };
        assert!(matches!(register(&res, &[], &[[0.0; 3]], &cfg), Err(Error::EmptyCloud)));
        assert!(matches!(register(&res, &[[0.0; 3]], &[], &cfg), Err(Error::EmptyCloud)));
    }
}
