//! Timing harness and memory model.
//!
//! Each kernel is run a few times for warm-up, then timed over `reps` repetitions on one
//! fixed random cloud. Only medians are meant to be compared, and only as ratios: absolute
//! latencies depend on the machine. Ratio floors used by callers sit well below the GPU
//! figures of the original work since the CPU MLP path is a tuned dense GEMM.

use std::fmt;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::embed::{Embedder, MlpEmbedder, TableEmbedder};
use crate::error::{Error, Result};
use crate::geom::Point;
use crate::jacobian::{dglobal_dxi_analytic, dglobal_dxi_fdm, mlp_analytic_jacobian, DEFAULT_FDM_STEP};
use crate::luti::{BasisTable, EmbedMode, Table};
use crate::nn::{fold_batchnorm, MlpParams};

pub const MIN_REPS: usize = 30;
pub const WARMUP_REPS: usize = 3;
/// Seed of the cloud every benchmark kernel embeds.
pub const CLOUD_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KernelConfig {
    pub d: Option<usize>,
    pub k: usize,
    pub n: usize,
    pub mode: Option<EmbedMode>,
    pub threads: usize,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct KernelTiming {
    pub name: String,
    pub reps: usize,
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
    pub config: KernelConfig,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchReport {
    pub kernels: Vec<KernelTiming>,
}

impl BenchReport {
    pub fn get(&self, name: &str) -> Option<&KernelTiming> {
        self.kernels.iter().find(|k| k.name == name)
    }

    /// `median(num) / median(den)`.
    pub fn ratio(&self, num: &str, den: &str) -> Option<f64> {
        let (a, b) = (self.get(num)?, self.get(den)?);
        Some(a.median_ns as f64 / (b.median_ns.max(1)) as f64)
    }
}

impl fmt::Display for BenchReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# single-threaded CPU medians after warm-up; ratio floors sit well below the GPU reference \
             ratios because dense MLP GEMMs run near peak on a CPU core while table blending is bound by \
             memory traffic"
        )?;
        writeln!(
            f,
            "{:<14} {:>5} {:>6} {:>6} {:>10} {:>5} {:>12} {:>12} {:>12}",
            "kernel", "D", "K", "N", "mode", "reps", "median_us", "p10_us", "p90_us"
        )?;
        for t in &self.kernels {
            let c = &t.config;
            writeln!(
                f,
                "{:<14} {:>5} {:>6} {:>6} {:>10} {:>5} {:>12.1} {:>12.1} {:>12.1}",
                t.name,
                c.d.map_or("-".to_string(), |d| d.to_string()),
                c.k,
                c.n,
                c.mode.map_or("-", |m| m.as_str()),
                t.reps,
                t.median_ns as f64 / 1e3,
                t.p10_ns as f64 / 1e3,
                t.p90_ns as f64 / 1e3,
            )?;
        }
        Ok(())
    }
}

/// Nearest-rank percentile of sorted samples.
fn percentile(sorted: &[u64], q: f64) -> u64 {
    let idx = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1;
    sorted[idx]
}

fn summarize(name: &str, config: KernelConfig, mut samples: Vec<u64>) -> KernelTiming {
    samples.sort_unstable();
    KernelTiming {
        name: name.to_string(),
        reps: samples.len(),
        median_ns: percentile(&samples, 0.5),
        p10_ns: percentile(&samples, 0.1),
        p90_ns: percentile(&samples, 0.9),
        config,
    }
}

/// Times one kernel: `WARMUP_REPS` untimed calls, then `max(reps, MIN_REPS)` timed calls.
pub fn time_kernel<T>(name: &str, config: KernelConfig, reps: usize, mut f: impl FnMut() -> T) -> KernelTiming {
    let mut kernels: Vec<Kernel<'_>> = vec![(name, config, Box::new(move || drop(std::hint::black_box(f()))))];
    time_interleaved(&mut kernels, reps).remove(0)
}

/// A named kernel and its configuration.
pub type Kernel<'a> = (&'a str, KernelConfig, Box<dyn FnMut() + 'a>);

/// Times several kernels round-robin so that slow phases of a shared machine hit all of them
/// alike and median ratios stay stable.
pub fn time_interleaved(kernels: &mut [Kernel<'_>], reps: usize) -> Vec<KernelTiming> {
    let reps = reps.max(MIN_REPS);
    for _ in 0..WARMUP_REPS {
        for (_, _, f) in kernels.iter_mut() {
            f();
        }
    }
    let mut samples = vec![Vec::with_capacity(reps); kernels.len()];
    for _ in 0..reps {
        for ((_, _, f), s) in kernels.iter_mut().zip(&mut samples) {
            let t0 = Instant::now();
            f();
            s.push(t0.elapsed().as_nanos() as u64);
        }
    }
    kernels
        .iter()
        .zip(samples)
        .map(|((name, config, _), s)| summarize(name, config.clone(), s))
        .collect()
}

fn kernel<'a, T>(name: &'a str, config: KernelConfig, mut f: impl FnMut() -> T + 'a) -> Kernel<'a> {
    (name, config, Box::new(move || drop(std::hint::black_box(f()))))
}

/// Uniform samples from the unit ball.
pub fn random_cloud(n: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pts = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
            rng.random::<f64>() * 2.0 - 1.0,
        ];
        if p.iter().map(|v| v * v).sum::<f64>() <= 1.0 {
            pts.push(p);
        }
    }
    pts
}

struct Setup {
    mlp: MlpEmbedder,
    folded: MlpParams,
    uni: TableEmbedder,
    irr: TableEmbedder,
    pts: Vec<Point>,
}

fn setup(mlp: &MlpParams, tbl: &BasisTable, n_points: usize) -> Result<Setup> {
    if mlp.output_dim() != tbl.k() {
        return Err(Error::DimensionMismatch {
            expected: mlp.output_dim(),
            actual: tbl.k(),
            context: "table channels vs MLP output",
        });
    }
    if n_points == 0 {
        return Err(Error::EmptyCloud);
    }
    let folded = fold_batchnorm(mlp)?;
    let table = Arc::new(tbl.clone());
    Ok(Setup {
        mlp: MlpEmbedder::new(Arc::new(folded.clone()))?,
        folded,
        uni: TableEmbedder::new(table.clone(), EmbedMode::Uniform),
        irr: TableEmbedder::new(table, EmbedMode::Irregular),
        pts: random_cloud(n_points, CLOUD_SEED),
    })
}

fn config(tbl: Option<&BasisTable>, k: usize, n: usize, mode: Option<EmbedMode>) -> KernelConfig {
    KernelConfig {
        d: tbl.map(|t| t.lattice().d()),
        k,
        n,
        mode,
        threads: rayon::current_num_threads(),
    }
}

/// Full-cloud embedding latency for the folded MLP and both interpolation modes.
pub fn bench_embedding(mlp: &MlpParams, tbl: &BasisTable, n_points: usize, reps: usize) -> Result<BenchReport> {
    let s = setup(mlp, tbl, n_points)?;
    let k = tbl.k();
    let mut kernels = vec![
        kernel("mlp", config(None, k, n_points, None), || s.mlp.embed_points(&s.pts)),
        kernel("luti_uni", config(Some(tbl), k, n_points, Some(EmbedMode::Uniform)), || {
            s.uni.embed_points(&s.pts)
        }),
        kernel("luti_irr", config(Some(tbl), k, n_points, Some(EmbedMode::Irregular)), || {
            s.irr.embed_points(&s.pts)
        }),
    ];
    Ok(BenchReport {
        kernels: time_interleaved(&mut kernels, reps),
    })
}

/// Global-feature pose Jacobian latency. The LUTI kernels use irregular interpolation.
pub fn bench_jacobian(mlp: &MlpParams, tbl: &BasisTable, n_points: usize, reps: usize) -> Result<BenchReport> {
    let s = setup(mlp, tbl, n_points)?;
    let k = tbl.k();
    let irr = Some(EmbedMode::Irregular);
    let t = DEFAULT_FDM_STEP;
    let mut kernels = vec![
        kernel("fdm_mlp", config(None, k, n_points, None), || {
            dglobal_dxi_fdm(&s.mlp, &s.pts, t).expect("valid input")
        }),
        kernel("fdm_luti", config(Some(tbl), k, n_points, irr), || {
            dglobal_dxi_fdm(&s.irr, &s.pts, t).expect("valid input")
        }),
        kernel("analytic_mlp", config(None, k, n_points, None), || {
            mlp_analytic_jacobian(&s.folded, &s.pts).expect("valid input")
        }),
        kernel("analytic_luti", config(Some(tbl), k, n_points, irr), || {
            dglobal_dxi_analytic(&s.irr, &s.pts).expect("valid input")
        }),
    ];
    Ok(BenchReport {
        kernels: time_interleaved(&mut kernels, reps),
    })
}

/// Size of a `D^M` lattice holding `K` parameters per node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    pub bytes: u128,
    /// The exact product did not fit; `bytes` is `u128::MAX`.
    pub saturated: bool,
}

pub const MIB: f64 = (1u64 << 20) as f64;

impl MemoryEstimate {
    pub fn megabytes(&self) -> f64 {
        self.bytes as f64 / MIB
    }
}

impl fmt::Display for MemoryEstimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.saturated {
            write!(f, ">= {} bytes (saturated)", self.bytes)
        } else {
            write!(f, "{} bytes ({} MB)", self.bytes, self.megabytes())
        }
    }
}

pub fn memory_estimate(d: u64, m: u32, k: u64, bytes_per_param: u64) -> Result<MemoryEstimate> {
    if d == 0 || m == 0 || k == 0 || bytes_per_param == 0 {
        return Err(Error::InvalidArgument("memory estimate inputs must all be at least 1".into()));
    }
    let exact = (d as u128)
        .checked_pow(m)
        .and_then(|n| n.checked_mul(k as u128))
        .and_then(|n| n.checked_mul(bytes_per_param as u128));
    Ok(match exact {
        Some(bytes) => MemoryEstimate { bytes, saturated: false },
        None => MemoryEstimate {
            bytes: u128::MAX,
            saturated: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Lattice;
    use crate::nn::init_params;

    #[test]
    fn spot_values() {
        let e = memory_estimate(4, 3, 1024, 4).unwrap();
        assert_eq!(e.bytes, 262_144);
        assert_eq!(e.to_string(), "262144 bytes (0.25 MB)");
        assert_eq!(memory_estimate(1024, 3, 1024, 4).unwrap().bytes, 4u128 << 40);
        assert_eq!(memory_estimate(8, 4, 1024, 4).unwrap().bytes, 16u128 << 20);
    }

    #[test]
    fn overflow_saturates() {
        let e = memory_estimate(u64::MAX, 8, u64::MAX, 8).unwrap();
        assert!(e.saturated);
        assert!(e.to_string().contains("saturated"));
        assert!(memory_estimate(0, 3, 1, 4).is_err());
    }

    #[test]
    fn percentile_nearest_rank() {
        let s: Vec<u64> = (1..=10).collect();
        assert_eq!(percentile(&s, 0.1), 1);
        assert_eq!(percentile(&s, 0.5), 5);
        assert_eq!(percentile(&s, 0.9), 9);
        assert_eq!(percentile(&[7], 0.5), 7);
    }

    #[test]
    fn reports_are_well_formed() {
        let mlp = init_params(&[3, 16, 8], true, 1);
        let tbl = crate::luti::bake(&fold_batchnorm(&mlp).unwrap(), &Lattice::new(3).unwrap()).unwrap();
        let r = bench_embedding(&mlp, &tbl, 64, 1).unwrap();
        assert_eq!(r.kernels.len(), 3);
        for t in &r.kernels {
            assert!(t.reps >= MIN_REPS);
            assert!(t.p10_ns <= t.median_ns && t.median_ns <= t.p90_ns);
        }
        let r = bench_jacobian(&mlp, &tbl, 64, 1).unwrap();
        assert_eq!(r.kernels.len(), 4);
        assert!(r.ratio("fdm_mlp", "fdm_luti").unwrap() > 0.0);
        assert_eq!(r.to_string().lines().filter(|l| !l.starts_with('#')).count(), 5);
    }
}
