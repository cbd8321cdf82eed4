//! Point clouds: synthetic shapes, XYZ/OFF ingestion, normalization and resampling.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{random_rotation, Point};

/// Jitter applied to synthetic surface samples.
pub const JITTER_SIGMA: f64 = 0.01;

pub const SHAPE_CLASSES: [&str; 8] = [
    "sphere", "cube", "cylinder", "cone", "torus", "pyramid", "cross", "helix",
];

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
    pub label: Option<usize>,
}

impl PointCloud {
    pub fn new(points: Vec<Point>, label: Option<usize>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        Ok(PointCloud { points, label })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    pub fn labels(&self) -> Result<Vec<usize>> {
        self.clouds
            .iter()
            .map(|c| c.label.ok_or_else(|| Error::invalid("unlabeled cloud in dataset")))
            .collect()
    }
}

/// Centroid to the origin, farthest point to radius 1. A cloud with zero extent maps to the
/// origin.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> PointCloud {
    let n = cloud.points.len() as f64;
    let mut c = [0.0; 3];
    for p in &cloud.points {
        for a in 0..3 {
            c[a] += p[a];
        }
    }
    let c = c.map(|v| v / n);
    let centered: Vec<Point> = cloud
        .points
        .iter()
        .map(|p| [p[0] - c[0], p[1] - c[1], p[2] - c[2]])
        .collect();
    let r = centered
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt())
        .fold(0.0, f64::max);
    let points = if r > 0.0 {
        centered.iter().map(|p| p.map(|v| v / r)).collect()
    } else {
        vec![[0.0; 3]; centered.len()]
    };
    PointCloud {
        points,
        label: cloud.label,
    }
}

/// `n` points, without replacement when `n ≤ N`, with replacement otherwise.
pub fn sample_n(cloud: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::invalid("cannot sample zero points"));
    }
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = cloud.points.len();
    let points = if n <= total {
        index::sample(&mut rng, total, n)
            .into_iter()
            .map(|i| cloud.points[i])
            .collect()
    } else {
        (0..n).map(|_| cloud.points[rng.random_range(0..total)]).collect()
    };
    Ok(PointCloud {
        points,
        label: cloud.label,
    })
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn unit_vector(rng: &mut impl Rng) -> Vector3<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    loop {
        let v = Vector3::new(normal.sample(rng), normal.sample(rng), normal.sample(rng));
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

fn triangle_sample(rng: &mut impl Rng, a: Vector3<f64>, b: Vector3<f64>, c: Vector3<f64>) -> Vector3<f64> {
    let (r1, r2): (f64, f64) = (rng.random(), rng.random());
    let s = r1.sqrt();
    a * (1.0 - s) + b * (s * (1.0 - r2)) + c * (s * r2)
}

fn pick_weighted(rng: &mut impl Rng, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if x < *w {
            return i;
        }
        x -= w;
    }
    weights.len() - 1
}

/// One point on the surface of shape `class`, before rotation and jitter.
fn shape_point(class: usize, rng: &mut impl Rng) -> Vector3<f64> {
    match class {
        // sphere
        0 => unit_vector(rng),
        // cube: random face, uniform on it
        1 => {
            let face = rng.random_range(0..6);
            let (u, v) = (uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
            let s = if face % 2 == 0 { 1.0 } else { -1.0 };
            match face / 2 {
                0 => Vector3::new(s, u, v),
                1 => Vector3::new(u, s, v),
                _ => Vector3::new(u, v, s),
            }
        }
        // cylinder, radius 0.5, height 2, area-weighted side and caps
        2 => {
            let r = 0.5;
            let part = pick_weighted(rng, &[TAU * r * 2.0, PI * r * r, PI * r * r]);
            let t = uniform(rng, 0.0, TAU);
            match part {
                0 => Vector3::new(r * t.cos(), r * t.sin(), uniform(rng, -1.0, 1.0)),
                p => {
                    let rr = r * rng.random::<f64>().sqrt();
                    Vector3::new(rr * t.cos(), rr * t.sin(), if p == 1 { 1.0 } else { -1.0 })
                }
            }
        }
        // cone, base radius 1 at z=-1, apex at z=1
        3 => {
            let lateral = PI * 5f64.sqrt();
            let t = uniform(rng, 0.0, TAU);
            if pick_weighted(rng, &[lateral, PI]) == 0 {
                let s = rng.random::<f64>().sqrt();
                Vector3::new(s * t.cos(), s * t.sin(), 1.0 - 2.0 * s)
            } else {
                let rr = rng.random::<f64>().sqrt();
                Vector3::new(rr * t.cos(), rr * t.sin(), -1.0)
            }
        }
        // torus, R=1, r=0.3, rejection-sampled for uniform area
        4 => {
            let (big, small) = (1.0, 0.3);
            loop {
                let u = uniform(rng, 0.0, TAU);
                let v = uniform(rng, 0.0, TAU);
                let w = (big + small * v.cos()) / (big + small);
                if rng.random::<f64>() <= w {
                    let ring = big + small * v.cos();
                    return Vector3::new(ring * u.cos(), ring * u.sin(), small * v.sin());
                }
            }
        }
        // square pyramid, base [-1,1]² at z=-1, apex (0,0,1)
        5 => {
            let apex = Vector3::new(0.0, 0.0, 1.0);
            let b = [
                Vector3::new(-1.0, -1.0, -1.0),
                Vector3::new(1.0, -1.0, -1.0),
                Vector3::new(1.0, 1.0, -1.0),
                Vector3::new(-1.0, 1.0, -1.0),
            ];
            let side = 5f64.sqrt(); // half base × slant height × 2
            match pick_weighted(rng, &[side, side, side, side, 4.0]) {
                4 => Vector3::new(uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), -1.0),
                f => triangle_sample(rng, b[f], b[(f + 1) % 4], apex),
            }
        }
        // two perpendicular squares sharing the z axis
        6 => {
            let (u, v) = (uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0));
            if rng.random::<bool>() {
                Vector3::new(0.0, u, v)
            } else {
                Vector3::new(u, 0.0, v)
            }
        }
        // helix tube: three turns, radius 1, pitch spanning z in [-1, 1]
        _ => {
            let turns = 3.0;
            let t = uniform(rng, 0.0, turns * TAU);
            let centre = Vector3::new(t.cos(), t.sin(), -1.0 + 2.0 * t / (turns * TAU));
            let tangent = Vector3::new(-t.sin(), t.cos(), 2.0 / (turns * TAU)).normalize();
            let mut off = unit_vector(rng);
            off -= tangent * off.dot(&tangent);
            let n = off.norm();
            if n > 1e-9 {
                off /= n;
            }
            centre + off * 0.08
        }
    }
}

/// Surface samples of shape `class` with random anisotropic scale, random rotation, jitter
/// and unit-sphere normalization.
pub fn synth_cloud(class: usize, n_points: usize, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
    if class >= SHAPE_CLASSES.len() {
        return Err(Error::invalid(format!("no synthetic class {class}")));
    }
    if n_points == 0 {
        return Err(Error::invalid("n_points must be positive"));
    }
    let scale = Vector3::new(uniform(rng, 0.8, 1.2), uniform(rng, 0.8, 1.2), uniform(rng, 0.8, 1.2));
    let rot = random_rotation(rng);
    let jitter = Normal::new(0.0, JITTER_SIGMA).expect("valid sigma");
    let points = (0..n_points)
        .map(|_| {
            let p = rot * shape_point(class, rng).component_mul(&scale);
            [
                p.x + jitter.sample(rng),
                p.y + jitter.sample(rng),
                p.z + jitter.sample(rng),
            ]
        })
        .collect();
    Ok(normalize_unit_sphere(&PointCloud {
        points,
        label: Some(class),
    }))
}

/// Labeled synthetic dataset, `n_per_class` clouds of each of the 8 classes, class-major order.
/// Each cloud draws from its own ChaCha stream so generation is order-independent.
pub fn synth_shapes(seed: u64, n_per_class: usize, n_points: usize) -> Result<Dataset> {
    let classes = SHAPE_CLASSES.len();
    let clouds = (0..classes * n_per_class)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            synth_cloud(i / n_per_class, n_points, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        clouds,
        class_names: SHAPE_CLASSES.iter().map(|s| s.to_string()).collect(),
    })
}

fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: format!("not valid UTF-8: {e}"),
    })
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn parse_coords(fields: &[&str], path: &Path, line: usize) -> Result<Point> {
    if fields.len() < 3 {
        return Err(parse_err(path, line, format!("expected 3 coordinates, found {}", fields.len())));
    }
    let mut p = [0.0; 3];
    for a in 0..3 {
        let v: f64 = fields[a]
            .parse()
            .map_err(|_| parse_err(path, line, format!("not a number: `{}`", fields[a])))?;
        if !v.is_finite() {
            return Err(parse_err(path, line, format!("non-finite coordinate `{}`", fields[a])));
        }
        p[a] = v;
    }
    Ok(p)
}

/// Whitespace-separated `x y z` per line. Blank lines and `#` comments are skipped; columns
/// past the third are ignored.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        points.push(parse_coords(&fields, path, i + 1)?);
    }
    if points.is_empty() {
        return Err(parse_err(path, 0, "no points"));
    }
    PointCloud::new(points, None)
}

/// OFF vertices; faces are not read. Accepts comment lines and counts glued to the header
/// (`OFF490 518 0`).
pub fn parse_off(text: &str, path: &Path) -> Result<PointCloud> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (hline, header) = lines.next().ok_or_else(|| parse_err(path, 0, "empty file"))?;
    let rest = header
        .strip_prefix("OFF")
        .ok_or_else(|| parse_err(path, hline, "missing OFF header"))?
        .trim();
    let (cline, counts) = if rest.is_empty() {
        lines
            .next()
            .ok_or_else(|| parse_err(path, hline, "missing vertex/face counts"))?
    } else {
        (hline, rest)
    };
    let counts: Vec<&str> = counts.split_whitespace().collect();
    if counts.len() < 2 {
        return Err(parse_err(path, cline, "expected vertex and face counts"));
    }
    let nv: usize = counts[0]
        .parse()
        .map_err(|_| parse_err(path, cline, format!("bad vertex count `{}`", counts[0])))?;
    if nv == 0 {
        return Err(parse_err(path, cline, "no vertices"));
    }
    let mut points = Vec::with_capacity(nv.min(1 << 20));
    for _ in 0..nv {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, format!("expected {nv} vertices, found {}", points.len())))?;
        let fields: Vec<&str> = l.split_whitespace().collect();
        points.push(parse_coords(&fields, path, ln)?);
    }
    PointCloud::new(points, None)
}

pub fn load_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_xyz(&read_text(path)?, path)
}

pub fn load_off(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    parse_off(&read_text(path)?, path)
}

/// Loads by extension: `.off` as OFF, anything else as XYZ.
pub fn load_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("off") => load_off(path),
        _ => load_xyz(path),
    }
}

/// Offset between the train and test seeds of [`synth_split`].
pub const TEST_SEED_OFFSET: u64 = 0x7e57_0000;

/// Synthetic split; train and test draw from different seeds so no cloud is shared.
pub fn synth_split(seed: u64, split: Split, n_per_class: usize, n_points: usize) -> Result<Dataset> {
    let seed = match split {
        Split::Train => seed,
        Split::Test => seed.wrapping_add(TEST_SEED_OFFSET),
    };
    synth_shapes(seed, n_per_class, n_points)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn dir_name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    out.sort();
    Ok(out)
}

/// Directory dataset laid out as `<root>/<class>/{train,test}/*.{off,xyz}`. Classes are the
/// sorted subdirectory names; each cloud is normalized and resampled to `n_points`.
pub fn load_dir(root: impl AsRef<Path>, split: Split, n_points: usize, seed: u64) -> Result<Dataset> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::invalid(format!("no class directories under {}", root.display())));
    }
    let mut clouds = Vec::new();
    let mut class_names = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(dir.file_name().unwrap_or_default().to_string_lossy().into_owned());
        let split_dir = dir.join(split.dir_name());
        if !split_dir.is_dir() {
            continue;
        }
        for file in sorted_entries(&split_dir)? {
            if !file.is_file() {
                continue;
            }
            let raw = load_cloud(&file)?;
            let mut cloud = sample_n(&normalize_unit_sphere(&raw), n_points, seed ^ clouds.len() as u64)?;
            cloud.label = Some(label);
            clouds.push(cloud);
        }
    }
    if clouds.is_empty() {
        return Err(Error::invalid(format!("no {} clouds under {}", split.dir_name(), root.display())));
    }
    Ok(Dataset { clouds, class_names })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn single_point_cloud_maps_to_origin() {
        let d = synth_shapes(3, 1, 1).unwrap();
        for c in &d.clouds {
            assert_eq!(c.points, vec![[0.0; 3]]);
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synth_shapes(42, 3, 64).unwrap();
        let b = synth_shapes(42, 3, 64).unwrap();
        assert_eq!(a, b);
        let c = synth_shapes(43, 3, 64).unwrap();
        assert_ne!(a.clouds[0].points, c.clouds[0].points);
        assert_eq!(a.len(), 24);
        assert_eq!(a.labels().unwrap()[..4], [0, 0, 0, 1]);
    }

    #[test]
    fn synthetic_clouds_are_normalized() {
        let d = synth_shapes(1, 2, 256).unwrap();
        for c in &d.clouds {
            let r = c.points.iter().map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).fold(0.0, f64::max);
            assert!(r <= 1.0 + 1e-9 && r > 0.99);
        }
    }

    #[test]
    fn sphere_radius_variance_is_small_before_jitter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let radii: Vec<f64> = (0..2000).map(|_| shape_point(0, &mut rng).norm()).collect();
        let mean = radii.iter().sum::<f64>() / radii.len() as f64;
        let var = radii.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / radii.len() as f64;
        assert!((mean - 1.0).abs() < 1e-12 && var < 1e-20);
    }

    #[test]
    fn normalization_matches_two_pass_oracle() {
        let cloud = PointCloud::new(vec![[1.0, 2.0, 3.0], [3.0, 2.0, 1.0], [2.0, 5.0, 2.0]], None).unwrap();
        let n = normalize_unit_sphere(&cloud);
        // centroid (2, 3, 2); farthest offset (0, 2, 0) has radius 2
        assert_eq!(n.points[2], [0.0, 1.0, 0.0]);
        let twice = normalize_unit_sphere(&n);
        for (a, b) in n.points.iter().zip(&twice.points) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampling_modes() {
        let cloud = PointCloud::new((0..10).map(|i| [i as f64, 0.0, 0.0]).collect(), Some(2)).unwrap();
        let s = sample_n(&cloud, 10, 1).unwrap();
        let mut xs: Vec<i64> = s.points.iter().map(|p| p[0] as i64).collect();
        xs.sort();
        assert_eq!(xs, (0..10).collect::<Vec<_>>());
        let s = sample_n(&cloud, 25, 1).unwrap();
        assert_eq!(s.len(), 25);
        assert_eq!(s.label, Some(2));
        assert_eq!(sample_n(&cloud, 7, 9).unwrap(), sample_n(&cloud, 7, 9).unwrap());
        assert!(sample_n(&cloud, 0, 1).is_err());
    }

    #[test]
    fn xyz_parsing() {
        let c = parse_xyz("0 0 0\n1 2 3\n# note\n\n-1.5 2e-3 4\n", p()).unwrap();
        assert_eq!(c.points, vec![[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-1.5, 2e-3, 4.0]]);
        match parse_xyz("1 2 3\n1 x 3\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(parse_xyz("1 2\n", p()).is_err());
        assert!(parse_xyz("", p()).is_err());
        assert!(parse_xyz("1 nan 2", p()).is_err());
    }

    #[test]
    fn off_parsing() {
        let text = "OFF\n# comment\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n";
        assert_eq!(parse_off(text, p()).unwrap().len(), 4);
        let glued = "OFF4 0 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n";
        assert_eq!(parse_off(glued, p()).unwrap().len(), 4);
        match parse_off("OFF\n3 0 0\n0 0 0\n1 1\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        assert!(parse_off("PLY\n", p()).is_err());
        assert!(parse_off("OFF\n5 0 0\n0 0 0\n", p()).is_err());
    }

    proptest! {
        #[test]
        fn parsers_never_panic(s in ".{0,200}") {
            let _ = parse_xyz(&s, p());
            let _ = parse_off(&s, p());
        }

        #[test]
        fn truncated_off_never_panics(cut in 0usize..60) {
            let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n3 0 1 2\n";
            let t = &text[..cut.min(text.len())];
            let _ = parse_off(t, p());
        }

        #[test]
        fn normalization_is_idempotent(pts in prop::collection::vec(prop::array::uniform3(-10.0f64..10.0), 2..40)) {
            let c = PointCloud::new(pts, None).unwrap();
            let a = normalize_unit_sphere(&c);
            let b = normalize_unit_sphere(&a);
            for (x, y) in a.points.iter().zip(&b.points) {
                for k in 0..3 {
                    prop_assert!((x[k] - y[k]).abs() < 1e-12);
                }
            }
            let r = a.points.iter().map(|q| (q[0]*q[0]+q[1]*q[1]+q[2]*q[2]).sqrt()).fold(0.0, f64::max);
            prop_assert!(r <= 1.0 + 1e-9);
        }
    }
}
