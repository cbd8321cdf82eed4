use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use luti_core::bench::{bench_embedding, bench_jacobian, memory_estimate};
use luti_core::data::{load_cloud, load_dir, synth_split, Dataset, Split};
use luti_core::embed::{build_embedder, EmbedResources};
use luti_core::geom::transform_points;
use luti_core::io::{mode_hint, read_lut, read_model, write_lut_with_hint, write_model, write_records, write_records_to};
use luti_core::luti::{self, embed_points, TvNorm};
use luti_core::nn::{fold_batchnorm, init_params};
use luti_core::pipeline::{self, evaluate, Embedding, Model, TrainConfig};
use luti_core::registration::{self, JacMode, RegistrationConfig};
use luti_core::{Error, Lattice, MlpParams, RigidTransform, Table};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{BakeArgs, BenchArgs, CliError, DatasetArgs, DumpSliceArgs, EmbedArgs, EvalArgs, JacArg};
use crate::{MemEstimateArgs, RegisterArgs, Suite, TrainArgs};

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path, e: io::Error) -> CliError {
    CliError::Data(Error::io(path, e))
}

/// One JSON object on its own stdout line.
fn emit<R: Serialize>(record: &R) -> CliResult {
    let stdout = io::stdout();
    write_records_to(stdout.lock(), std::slice::from_ref(record)).map_err(|e| io_err(Path::new("<stdout>"), e))
}

/// Embedding MLP of a model file, batch norm folded in.
fn model_mlp(model: &Model) -> Result<MlpParams, CliError> {
    match &model.embedding {
        Embedding::Mlp(m) | Embedding::Lattice { mlp: m, .. } => Ok(fold_batchnorm(m)?),
        Embedding::Table { .. } => Err(CliError::Data(Error::ModelFormat(
            "model embeds through a fixed table and has no MLP".into(),
        ))),
    }
}

#[derive(Serialize)]
struct BakeRecord<'a> {
    out: &'a Path,
    d: usize,
    k: usize,
    nodes: usize,
    mode_hint: u8,
    bytes: u64,
}

pub fn bake(a: BakeArgs) -> CliResult {
    let model = read_model(&a.model)?;
    let mlp = model_mlp(&model)?;
    let lattice = Lattice::new(a.d)?;
    let table = luti::bake(&mlp, &lattice)?;
    let hint = model.embedding.mode().map_or(0, mode_hint);
    write_lut_with_hint(&table, hint, &a.out)?;
    let bytes = std::fs::metadata(&a.out).map_err(|e| io_err(&a.out, e))?.len();
    emit(&BakeRecord {
        out: &a.out,
        d: a.d,
        k: table.k(),
        nodes: lattice.node_count(),
        mode_hint: hint,
        bytes,
    })
}

fn write_rows(w: &mut impl Write, values: &[f64], k: usize) -> io::Result<()> {
    for row in values.chunks_exact(k) {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b" ")?;
            }
            write!(w, "{v}")?;
            first = false;
        }
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn embed(a: EmbedArgs) -> CliResult {
    let table = read_lut(&a.lut)?;
    let cloud = load_cloud(&a.cloud)?;
    let values = embed_points(&table, a.mode.into(), &cloud.points);
    match &a.out {
        Some(path) => {
            let f = File::create(path).map_err(|e| io_err(path, e))?;
            write_rows(&mut BufWriter::new(f), &values, table.k()).map_err(|e| io_err(path, e))
        }
        None => write_rows(&mut BufWriter::new(io::stdout().lock()), &values, table.k())
            .map_err(|e| io_err(Path::new("<stdout>"), e)),
    }
}

#[derive(Serialize)]
struct RegisterRecord {
    jac: String,
    iterations: usize,
    converged: bool,
    damped: bool,
    residual_norms: Vec<f64>,
    /// Row-major 4×4 homogeneous transform taking the source onto the target.
    transform: [[f64; 4]; 4],
    #[serde(skip_serializing_if = "Option::is_none")]
    rot_err_deg: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trans_err: Option<f64>,
    wall_ms: f64,
}

pub fn register(a: RegisterArgs) -> CliResult {
    let jac_mode = match a.jac {
        JacArg::FdmMlp => JacMode::FdmMlp,
        JacArg::FdmLuti => JacMode::FdmLuti,
        JacArg::AnalyticLuti => JacMode::AnalyticLuti,
    };
    let mut res = EmbedResources::default();
    match jac_mode {
        JacMode::FdmMlp => {
            let path = a.model.as_ref().ok_or_else(|| usage("--jac fdm-mlp needs --model"))?;
            res.mlp = Some(Arc::new(model_mlp(&read_model(path)?)?));
        }
        _ => {
            let path = a.lut.as_ref().ok_or_else(|| usage("this Jacobian needs --lut"))?;
            res.table = Some(Arc::new(read_lut(path)?));
        }
    }
    let cfg = RegistrationConfig {
        max_iter: a.iters,
        jac_mode,
        fdm_step: a.t,
        embed_mode: a.mode.into(),
        ..Default::default()
    };
    let source = load_cloud(&a.source)?.points;
    let (target, truth) = match &a.target {
        Some(path) => (load_cloud(path)?.points, None),
        None => {
            if !(a.max_angle >= 0.0 && a.max_trans >= 0.0) {
                return Err(usage("--max-angle and --max-trans must be non-negative"));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            let truth = RigidTransform::random(&mut rng, a.max_angle.to_radians(), a.max_trans);
            (transform_points(&truth, &source), Some(truth))
        }
    };
    let start = Instant::now();
    let out = registration::register(&res, &source, &target, &cfg)?;
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    let h = out.g_est.to_homogeneous();
    let err = truth.map(|t| out.g_est.error_to(&t));
    emit(&RegisterRecord {
        jac: jac_mode.to_string(),
        iterations: out.iterations_used,
        converged: out.converged,
        damped: out.damped,
        residual_norms: out.residual_norms,
        transform: std::array::from_fn(|r| std::array::from_fn(|c| h[(r, c)])),
        rot_err_deg: err.map(|e| e.0.to_degrees()),
        trans_err: err.map(|e| e.1),
        wall_ms,
    })
}

fn load_dataset(d: &DatasetArgs, split: Split, seed: u64) -> Result<Dataset, CliError> {
    if d.points == 0 {
        return Err(usage("--points must be positive"));
    }
    if d.dataset == "synth" {
        let per_class = match split {
            Split::Train => d.train_per_class,
            Split::Test => d.test_per_class,
        };
        if per_class == 0 {
            return Err(usage("clouds per class must be positive"));
        }
        return Ok(synth_split(seed, split, per_class, d.points)?);
    }
    match d.dataset.strip_prefix("dir:") {
        Some(root) if !root.is_empty() => Ok(load_dir(root, split, d.points, seed)?),
        _ => Err(usage(format!("--dataset must be `synth` or `dir:PATH`, got `{}`", d.dataset))),
    }
}

#[derive(Serialize)]
struct TrainRecord<'a> {
    variant: &'a str,
    d: usize,
    k: usize,
    epochs: usize,
    seed: u64,
    train_clouds: usize,
    test_clouds: usize,
    final_train_acc: Option<f64>,
    test_accuracy: f64,
    seconds: f64,
    model: &'a Path,
}

pub fn train(a: TrainArgs) -> CliResult {
    pipeline::variant(&a.variant)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        k: a.k,
        d: a.d,
        seed: a.seed,
        lambda_tv: a.lambda_tv,
        tv_norm: TvNorm::from_p(a.tv_p)?,
        pretrain_frac: a.pretrain_frac,
        base_model: match &a.base_model {
            Some(p) => Some(Arc::new(read_model(p)?)),
            None => None,
        },
        ..Default::default()
    };
    cfg.validate()?;
    let train_set = load_dataset(&a.data, Split::Train, a.seed)?;
    let test_set = load_dataset(&a.data, Split::Test, a.seed)?;
    let start = Instant::now();
    let outcome = pipeline::train(&a.variant, &train_set, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    write_model(&outcome.model, &a.out)?;
    if let Some(path) = &a.records {
        write_records(&outcome.history, path)?;
    }
    let report = evaluate(&outcome.model, &test_set)?;
    emit(&TrainRecord {
        variant: &a.variant,
        d: a.d,
        k: a.k,
        epochs: a.epochs,
        seed: a.seed,
        train_clouds: train_set.len(),
        test_clouds: test_set.len(),
        final_train_acc: outcome.history.last().map(|r| r.train_acc),
        test_accuracy: report.accuracy,
        seconds,
        model: &a.out,
    })
}

pub fn eval(a: EvalArgs) -> CliResult {
    let mut model = read_model(&a.model)?;
    if let Some(path) = &a.lut {
        let table = read_lut(path)?;
        let mode = a
            .mode
            .map(Into::into)
            .or(model.embedding.mode())
            .unwrap_or(luti_core::EmbedMode::Irregular);
        model.embedding = Embedding::Table { table, mode };
        model.validate()?;
    } else if a.mode.is_some() {
        return Err(usage("--mode only applies together with --lut"));
    }
    let data = load_dataset(&a.data, Split::Test, a.seed)?;
    emit(&evaluate(&model, &data)?)
}

pub fn bench(a: BenchArgs) -> CliResult {
    if a.k == 0 || a.n == 0 {
        return Err(usage("--k and --n must be positive"));
    }
    let mlp = init_params(&[3, 64, 64, 64, 128, a.k], true, a.seed);
    let table = luti::bake(&fold_batchnorm(&mlp)?, &Lattice::new(a.d)?)?;
    let report = match a.suite {
        Suite::Embedding => bench_embedding(&mlp, &table, a.n, a.reps)?,
        Suite::Jacobian => bench_jacobian(&mlp, &table, a.n, a.reps)?,
    };
    eprint!("{report}");
    let stdout = io::stdout();
    write_records_to(stdout.lock(), &report.kernels).map_err(|e| io_err(Path::new("<stdout>"), e))
}

pub fn dump_slice(a: DumpSliceArgs) -> CliResult {
    let table = read_lut(&a.lut)?;
    let res = EmbedResources {
        table: Some(Arc::new(table)),
        ..Default::default()
    };
    let mode: luti_core::EmbedMode = a.mode.into();
    let emb = build_embedder(mode.as_str(), &res)?;
    let grid = pipeline::dump_slice(emb.as_ref(), a.z, &a.channels, a.res)?;
    print!("{}", grid.to_table());
    Ok(())
}

pub fn mem_estimate(a: MemEstimateArgs) -> CliResult {
    println!("{}", memory_estimate(a.d, a.m, a.k, a.bytes)?);
    Ok(())
}
