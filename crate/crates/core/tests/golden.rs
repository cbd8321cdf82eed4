//! Golden sample files under `samples/`. Set `LUTI_REGEN_SAMPLES=1` to rewrite them.

use std::fmt::Write as _;
use std::path::PathBuf;

use luti_core::data::{load_cloud, synth_cloud};
use luti_core::io::{decode_lut, encode_lut, mode_hint, model_from_str, model_to_string};
use luti_core::nn::{fold_batchnorm, init_params};
use luti_core::pipeline::{Embedding, Model};
use luti_core::{luti, EmbedMode, Lattice, Table};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SAMPLE_D: usize = 3;

fn samples() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn sample_model() -> Model {
    let mlp = init_params(&[3, 16, 16, 8], true, 11);
    let head = init_params(&[8, 8, 4], false, 12);
    Model {
        variant: "luti_irr_e2e".into(),
        embedding: Embedding::Lattice {
            mlp,
            lattice: Lattice::new(SAMPLE_D).unwrap(),
            mode: EmbedMode::Irregular,
        },
        head,
        class_names: ["a", "b", "c", "d"].map(String::from).to_vec(),
    }
}

fn sample_lut(model: &Model) -> Vec<u8> {
    let Embedding::Lattice { mlp, mode, .. } = &model.embedding else { unreachable!() };
    let table = luti::bake(&fold_batchnorm(mlp).unwrap(), &Lattice::new(SAMPLE_D).unwrap()).unwrap();
    encode_lut(&table, mode_hint(*mode))
}

fn sample_xyz() -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cloud = synth_cloud(2, 64, &mut rng).unwrap();
    let mut s = String::from("# 64 points of a synthetic shape\n");
    for p in &cloud.points {
        writeln!(s, "{} {} {}", p[0], p[1], p[2]).unwrap();
    }
    s
}

const SAMPLE_OFF: &str = "OFF
# unit cube
8 6 0
-0.5 -0.5 -0.5
0.5 -0.5 -0.5
0.5 0.5 -0.5
-0.5 0.5 -0.5
-0.5 -0.5 0.5
0.5 -0.5 0.5
0.5 0.5 0.5
-0.5 0.5 0.5
4 0 3 2 1
4 4 5 6 7
4 0 1 5 4
4 2 3 7 6
4 1 2 6 5
4 0 4 7 3
";

fn check(name: &str, expected: &[u8]) {
    let path = samples().join(name);
    if std::env::var_os("LUTI_REGEN_SAMPLES").is_some() {
        std::fs::create_dir_all(samples()).unwrap();
        std::fs::write(&path, expected).unwrap();
    }
    let actual = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(actual == expected, "{name} differs from its generator");
}

#[test]
fn golden_files_match_generators() {
    let model = sample_model();
    check("model.json", model_to_string(&model).unwrap().as_bytes());
    check("tiny.lut", &sample_lut(&model));
    check("cloud.xyz", sample_xyz().as_bytes());
    check("cube.off", SAMPLE_OFF.as_bytes());
}

#[test]
fn golden_model_reads_back_exactly() {
    let text = std::fs::read_to_string(samples().join("model.json")).unwrap();
    assert_eq!(model_from_str(&text).unwrap(), sample_model());
}

#[test]
fn golden_lut_header_and_size() {
    let bytes = std::fs::read(samples().join("tiny.lut")).unwrap();
    assert_eq!(bytes.len(), 72 + 27 * 8 * 4);
    let (h, table) = decode_lut(&bytes).unwrap();
    assert_eq!((h.version, h.d, h.k, h.mode_hint), (1, 3, 8, 1));
    assert_eq!(table.lattice().d(), 3);
}

#[test]
fn golden_lut_embedding_tracks_the_training_path() {
    let model = sample_model();
    let bytes = std::fs::read(samples().join("tiny.lut")).unwrap();
    let (_, table) = decode_lut(&bytes).unwrap();
    let cloud = load_cloud(samples().join("cloud.xyz")).unwrap();
    assert_eq!(cloud.len(), 64);
    let from_lut = luti::embed_points(&table, EmbedMode::Irregular, &cloud.points);
    let reference = model.embedding.embed_training_path(&cloud.points).unwrap();
    let scale = reference.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for (a, b) in from_lut.iter().zip(&reference) {
        // f32 storage
        assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
    }
}

#[test]
fn golden_off_vertices() {
    let cube = load_cloud(samples().join("cube.off")).unwrap();
    assert_eq!(cube.len(), 8);
    assert!(cube.points.iter().all(|p| p.iter().all(|c| c.abs() == 0.5)));
}
