//! Lookup-table interpolated embedding.
//!
//! A [`BasisTable`] holds the embedding MLP evaluated at every lattice node. At inference a
//! point's embedding is the trilinear blend of its 8 cell corners (uniform mode), the
//! elementwise minimum of that blend and its channel reversal (irregular mode), or the row of
//! the nearest node. Training evaluates the MLP at the lattice nodes and pushes gradients back
//! through the same interpolation, so a baked table reproduces the trained network exactly.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Point;
use crate::lattice::{trilinear_weights, Lattice};
pub(crate) use crate::simd::blend;
use crate::simd::take_max;
use crate::nn::{ForwardCache, GradientBuffer, MlpParams, Mode, Upstream};

/// Nodes evaluated per MLP call when baking large lattices.
const BAKE_CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedMode {
    Uniform,
    Irregular,
    Nearest,
}

impl EmbedMode {
    pub const ALL: [EmbedMode; 3] = [EmbedMode::Uniform, EmbedMode::Irregular, EmbedMode::Nearest];

    pub fn as_str(&self) -> &'static str {
        match self {
            EmbedMode::Uniform => "uniform",
            EmbedMode::Irregular => "irregular",
            EmbedMode::Nearest => "nearest",
        }
    }
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EmbedMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        EmbedMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::UnknownName {
                kind: "embed mode",
                name: s.to_string(),
                known: "uniform, irregular, nearest".into(),
            })
    }
}

/// Row-per-node table of K-channel basis vectors.
pub trait Table {
    fn lattice(&self) -> &Lattice;
    fn k(&self) -> usize;
    fn data(&self) -> &[f64];

    fn row(&self, node: usize) -> &[f64] {
        let k = self.k();
        &self.data()[node * k..(node + 1) * k]
    }
}

/// Baked basis vectors; immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisTable {
    lattice: Lattice,
    k: usize,
    data: Vec<f64>,
}

/// A table whose entries are trained directly, without an MLP behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectTable {
    lattice: Lattice,
    k: usize,
    pub data: Vec<f64>,
}

fn check_table(lattice: &Lattice, k: usize, data: &[f64]) -> Result<()> {
    if k == 0 {
        return Err(Error::invalid("table needs at least one channel"));
    }
    let rows = lattice.node_count();
    if data.len() != rows * k {
        return Err(Error::DimensionMismatch {
            expected: rows * k,
            actual: data.len(),
            context: "table data",
        });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("table entries must be finite"));
    }
    Ok(())
}

impl BasisTable {
    pub fn from_data(lattice: Lattice, k: usize, data: Vec<f64>) -> Result<Self> {
        check_table(&lattice, k, &data)?;
        Ok(BasisTable { lattice, k, data })
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
}

impl Table for BasisTable {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn k(&self) -> usize {
        self.k
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
}

impl DirectTable {
    pub fn from_data(lattice: Lattice, k: usize, data: Vec<f64>) -> Result<Self> {
        check_table(&lattice, k, &data)?;
        Ok(DirectTable { lattice, k, data })
    }

    /// Entries drawn uniformly from `[-scale, scale]`.
    pub fn random(lattice: Lattice, k: usize, scale: f64, seed: u64) -> Self {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..lattice.node_count() * k)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect();
        DirectTable { lattice, k, data }
    }

    pub fn freeze(self) -> BasisTable {
        BasisTable {
            lattice: self.lattice,
            k: self.k,
            data: self.data,
        }
    }
}

impl Table for DirectTable {
    fn lattice(&self) -> &Lattice {
        &self.lattice
    }
    fn k(&self) -> usize {
        self.k
    }
    fn data(&self) -> &[f64] {
        &self.data
    }
}

/// In-place `z[c] = min(z[c], z[K-1-c])`.
#[inline]
pub(crate) fn fold_min_reverse(z: &mut [f64]) {
    let k = z.len();
    for c in 0..k / 2 {
        let m = z[c].min(z[k - 1 - c]);
        z[c] = m;
        z[k - 1 - c] = m;
    }
}

/// `Γ`: reverses the channel order.
pub fn channel_reverse(z: &[f64]) -> Vec<f64> {
    z.iter().rev().copied().collect()
}

/// Evaluates the MLP (eval mode) at every lattice node.
pub fn bake(mlp: &MlpParams, lattice: &Lattice) -> Result<BasisTable> {
    mlp.validate()?;
    if mlp.input_dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            actual: mlp.input_dim(),
            context: "bake needs a 3-input mlp",
        });
    }
    let k = mlp.output_dim();
    let nodes = lattice.node_count();
    let mut data = Vec::with_capacity(nodes * k);
    let mut start = 0;
    while start < nodes {
        let end = (start + BAKE_CHUNK).min(nodes);
        let coords = node_coord_buffer(lattice, start..end);
        let cache = mlp.forward_batch(&coords, end - start, Mode::Eval, None)?;
        data.extend_from_slice(cache.output());
        start = end;
    }
    BasisTable::from_data(*lattice, k, data)
}

fn node_coord_buffer(lattice: &Lattice, nodes: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut coords = Vec::new();
    for id in nodes {
        coords.extend_from_slice(&lattice.node_coords(lattice.node_indices(id)));
    }
    coords
}

pub fn embed_uniform_into<T: Table + ?Sized>(tbl: &T, p: &Point, out: &mut [f64]) {
    let lat = tbl.lattice();
    let c = lat.locate(p);
    let w = trilinear_weights(&c);
    let ids = lat.corner_ids(&c);
    let rows = ids.map(|id| tbl.row(id));
    blend(rows, &w, out);
}

pub fn embed_irregular_into<T: Table + ?Sized>(tbl: &T, p: &Point, out: &mut [f64]) {
    embed_uniform_into(tbl, p, out);
    fold_min_reverse(out);
}

pub fn embed_nearest_into<T: Table + ?Sized>(tbl: &T, p: &Point, out: &mut [f64]) {
    out.copy_from_slice(tbl.row(tbl.lattice().nearest_node(p)));
}

pub fn embed_into<T: Table + ?Sized>(tbl: &T, mode: EmbedMode, p: &Point, out: &mut [f64]) {
    match mode {
        EmbedMode::Uniform => embed_uniform_into(tbl, p, out),
        EmbedMode::Irregular => embed_irregular_into(tbl, p, out),
        EmbedMode::Nearest => embed_nearest_into(tbl, p, out),
    }
}

pub fn embed_uniform<T: Table + ?Sized>(tbl: &T, p: &Point) -> Vec<f64> {
    let mut out = vec![0.0; tbl.k()];
    embed_uniform_into(tbl, p, &mut out);
    out
}

pub fn embed_irregular<T: Table + ?Sized>(tbl: &T, p: &Point) -> Vec<f64> {
    let mut out = vec![0.0; tbl.k()];
    embed_irregular_into(tbl, p, &mut out);
    out
}

pub fn embed_nearest<T: Table + ?Sized>(tbl: &T, p: &Point) -> Vec<f64> {
    let mut out = vec![0.0; tbl.k()];
    embed_nearest_into(tbl, p, &mut out);
    out
}

/// Channels per half-block in the cell-grouped kernels; eight row slices of this length
/// and their mirrors stay in L1.
const BLEND_BLOCK: usize = 128;

/// Points ordered by containing cell, with their lower-corner node and trilinear weights.
struct CellGroups {
    cells: Vec<(usize, [f64; 8])>,
    order: Vec<u32>,
}

impl CellGroups {
    fn new(lat: &Lattice, pts: &[Point]) -> Self {
        let cells: Vec<(usize, [f64; 8])> = pts
            .iter()
            .map(|p| {
                let c = lat.locate(p);
                (lat.node_index(c.base), trilinear_weights(&c))
            })
            .collect();
        let mut order: Vec<u32> = (0..pts.len() as u32).collect();
        order.sort_unstable_by_key(|&i| (cells[i as usize].0, i));
        CellGroups { cells, order }
    }

    /// Runs `f(corner_ids, group)` once per occupied cell; each group is in index order.
    fn for_each(&self, lat: &Lattice, mut f: impl FnMut([usize; 8], &[u32])) {
        let (d, d2) = (lat.d(), lat.d() * lat.d());
        for group in self.order.chunk_by(|&a, &b| self.cells[a as usize].0 == self.cells[b as usize].0) {
            let base = self.cells[group[0] as usize].0;
            f(std::array::from_fn(|j| base + (j >> 2) * d2 + ((j >> 1) & 1) * d + (j & 1)), group);
        }
    }

    fn weights(&self, i: u32) -> &[f64; 8] {
        &self.cells[i as usize].1
    }
}

/// Channel ranges `lo..hi` in the lower half paired with their mirrors `k-hi..k-lo`. An odd
/// middle channel comes last as a pair with an empty mirror.
fn mirrored_blocks(k: usize) -> impl Iterator<Item = (usize, usize)> {
    let half = k / 2;
    (0..half)
        .step_by(BLEND_BLOCK)
        .map(move |lo| (lo, (lo + BLEND_BLOCK).min(half)))
        .chain((k % 2 == 1).then_some((half, half + 1)))
}

/// Corner-row slices for channels `lo..hi` and their mirror `k-hi..k-lo` (empty for the odd
/// middle channel).
fn block_rows<'t, T: Table + ?Sized>(tbl: &'t T, ids: &[usize; 8], (lo, hi): (usize, usize)) -> [[&'t [f64]; 8]; 2] {
    let k = tbl.k();
    let mirror = if lo < k / 2 { k - hi..k - lo } else { 0..0 };
    [ids.map(|id| &tbl.row(id)[lo..hi]), ids.map(|id| &tbl.row(id)[mirror.clone()])]
}

/// Blends one block pair for one point and folds it in irregular mode. Values match
/// [`embed_into`] exactly.
#[inline]
fn blend_block_pair(rows: &[[&[f64]; 8]; 2], w: &[f64; 8], fold: bool, a: &mut [f64], b: &mut [f64]) {
    blend(rows[0], w, a);
    if b.is_empty() {
        return;
    }
    blend(rows[1], w, b);
    if fold {
        for (x, y) in a.iter_mut().zip(b.iter_mut().rev()) {
            let m = x.min(*y);
            *x = m;
            *y = m;
        }
    }
}

/// `N × K` embeddings of a whole cloud.
pub fn embed_points<T: Table + ?Sized>(tbl: &T, mode: EmbedMode, pts: &[Point]) -> Vec<f64> {
    let mut out = vec![0.0; pts.len() * tbl.k()];
    embed_points_into(tbl, mode, pts, &mut out);
    out
}

/// Writes `N × K` embeddings into `out`. Points sharing a cell are blended together one
/// channel block at a time so the corner rows are read from cache once per block; each
/// output value is computed exactly as in [`embed_into`].
pub fn embed_points_into<T: Table + ?Sized>(tbl: &T, mode: EmbedMode, pts: &[Point], out: &mut [f64]) {
    let k = tbl.k();
    assert_eq!(out.len(), pts.len() * k, "output buffer must hold N × K values");
    if mode == EmbedMode::Nearest {
        for (p, row) in pts.iter().zip(out.chunks_exact_mut(k)) {
            embed_nearest_into(tbl, p, row);
        }
        return;
    }
    let fold = mode == EmbedMode::Irregular;
    let groups = CellGroups::new(tbl.lattice(), pts);
    groups.for_each(tbl.lattice(), |ids, group| {
        let half = k / 2;
        for (lo, hi) in mirrored_blocks(k) {
            let rows = block_rows(tbl, &ids, (lo, hi));
            for &i in group {
                let row = &mut out[i as usize * k..(i as usize + 1) * k];
                let (left, right) = row.split_at_mut(half);
                let (a, b) = if lo < half {
                    (&mut left[lo..hi], &mut right[k - hi - half..k - lo - half])
                } else {
                    (&mut right[..1], &mut [][..])
                };
                blend_block_pair(&rows, groups.weights(i), fold, a, b);
            }
        }
    });
}

/// Channel-wise max over the cloud's embeddings and the lowest point index attaining it,
/// computed without materializing the `N × K` buffer.
pub fn embed_max<T: Table + ?Sized>(tbl: &T, mode: EmbedMode, pts: &[Point]) -> (Vec<f64>, Vec<usize>) {
    let k = tbl.k();
    let mut best = vec![f64::NEG_INFINITY; k];
    let mut arg = vec![usize::MAX; k];
    if mode == EmbedMode::Nearest {
        for (i, p) in pts.iter().enumerate() {
            take_max(tbl.row(tbl.lattice().nearest_node(p)), i, &mut best, &mut arg);
        }
        return (best, arg);
    }
    let fold = mode == EmbedMode::Irregular;
    let groups = CellGroups::new(tbl.lattice(), pts);
    let mut a = vec![0.0; BLEND_BLOCK];
    let mut b = vec![0.0; BLEND_BLOCK];
    groups.for_each(tbl.lattice(), |ids, group| {
        for (lo, hi) in mirrored_blocks(k) {
            let n = hi - lo;
            let nb = if lo < k / 2 { n } else { 0 };
            let rows = block_rows(tbl, &ids, (lo, hi));
            for &i in group {
                let i = i as usize;
                blend_block_pair(&rows, groups.weights(i as u32), fold, &mut a[..n], &mut b[..nb]);
                take_max(&a[..n], i, &mut best[lo..hi], &mut arg[lo..hi]);
                take_max(&b[..nb], i, &mut best[k - hi..k - hi + nb], &mut arg[k - hi..k - hi + nb]);
            }
        }
    });
    (best, arg)
}

/// Per-point interpolation record: which rows of a value buffer were blended and how.
#[derive(Debug, Clone)]
pub struct InterpCache {
    pub mode: EmbedMode,
    pub k: usize,
    pub n: usize,
    corners: Vec<[u32; 8]>,
    weights: Vec<[f64; 8]>,
    nearest: Vec<u32>,
    /// Irregular mode: `true` when output channel `c` took its value from channel `K-1-c`.
    reversed: Vec<bool>,
}

impl InterpCache {
    fn new(mode: EmbedMode, k: usize, n: usize) -> Self {
        InterpCache {
            mode,
            k,
            n,
            corners: Vec::new(),
            weights: Vec::new(),
            nearest: Vec::new(),
            reversed: Vec::new(),
        }
    }

    /// Scatters `(point, channel, grad)` entries back onto the blended rows.
    pub fn scatter(&self, entries: &[(usize, usize, f64)], row_grads: &mut [f64]) -> Result<()> {
        let k = self.k;
        for &(i, c, g) in entries {
            if i >= self.n || c >= k {
                return Err(Error::invalid("upstream entry out of range"));
            }
            if g == 0.0 {
                continue;
            }
            match self.mode {
                EmbedMode::Nearest => {
                    row_grads[self.nearest[i] as usize * k + c] += g;
                }
                EmbedMode::Uniform | EmbedMode::Irregular => {
                    let src = if self.mode == EmbedMode::Irregular && self.reversed[i * k + c] {
                        k - 1 - c
                    } else {
                        c
                    };
                    let w = &self.weights[i];
                    for (j, &row) in self.corners[i].iter().enumerate() {
                        row_grads[row as usize * k + src] += w[j] * g;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Interpolates rows of `values` (`rows × K`) for each point. `row_of` maps a lattice node id
/// to its row in `values`.
fn interpolate_rows(
    lattice: &Lattice,
    values: &[f64],
    k: usize,
    pts: &[Point],
    mode: EmbedMode,
    row_of: impl Fn(usize) -> usize,
) -> (Vec<f64>, InterpCache) {
    let n = pts.len();
    let mut out = vec![0.0; n * k];
    let mut cache = InterpCache::new(mode, k, n);
    let row = |r: usize| &values[r * k..(r + 1) * k];
    match mode {
        EmbedMode::Nearest => {
            cache.nearest.reserve(n);
            for (p, o) in pts.iter().zip(out.chunks_exact_mut(k)) {
                let r = row_of(lattice.nearest_node(p));
                o.copy_from_slice(row(r));
                cache.nearest.push(r as u32);
            }
        }
        EmbedMode::Uniform | EmbedMode::Irregular => {
            cache.corners.reserve(n);
            cache.weights.reserve(n);
            if mode == EmbedMode::Irregular {
                cache.reversed = vec![false; n * k];
            }
            for (i, (p, o)) in pts.iter().zip(out.chunks_exact_mut(k)).enumerate() {
                let c = lattice.locate(p);
                let w = trilinear_weights(&c);
                let rows = lattice.corner_ids(&c).map(|id| row_of(id) as u32);
                blend(rows.map(|r| row(r as usize)), &w, o);
                if mode == EmbedMode::Irregular {
                    let flags = &mut cache.reversed[i * k..(i + 1) * k];
                    for ch in 0..k {
                        // ties stay on the un-reversed branch
                        flags[ch] = o[k - 1 - ch] < o[ch];
                    }
                    fold_min_reverse(o);
                }
                cache.corners.push(rows);
                cache.weights.push(w);
            }
        }
    }
    (out, cache)
}

/// How the training forward pass chooses which lattice nodes to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NodeStrategy {
    /// Full lattice when `d³ <= 8 · points`, touched corners otherwise.
    #[default]
    Auto,
    FullLattice,
    TouchedCorners,
}

/// Everything [`train_backward`] needs from a [`train_forward`] call.
#[derive(Debug, Clone)]
pub struct LatticeCache {
    pub interp: InterpCache,
    /// Lattice node ids that were pushed through the MLP, in evaluation order.
    pub nodes: Vec<usize>,
    mlp_cache: ForwardCache,
}

impl LatticeCache {
    pub fn node_values(&self) -> &[f64] {
        self.mlp_cache.output()
    }
}

/// Training-time forward: MLP at lattice nodes, then interpolation. Returns `N × K`.
pub fn train_forward(
    mlp: &MlpParams,
    lattice: &Lattice,
    pts: &[Point],
    mode: EmbedMode,
    strategy: NodeStrategy,
) -> Result<(Vec<f64>, LatticeCache)> {
    if mlp.input_dim() != 3 {
        return Err(Error::DimensionMismatch {
            expected: 3,
            actual: mlp.input_dim(),
            context: "lattice mlp input",
        });
    }
    let total = lattice.node_count();
    let full = match strategy {
        NodeStrategy::FullLattice => true,
        NodeStrategy::TouchedCorners => false,
        NodeStrategy::Auto => total <= 8 * pts.len().max(1),
    };
    let (nodes, local): (Vec<usize>, Vec<u32>) = if full {
        ((0..total).collect(), (0..total as u32).collect())
    } else {
        let mut touched = Vec::with_capacity(pts.len() * 8);
        for p in pts {
            match mode {
                EmbedMode::Nearest => touched.push(lattice.nearest_node(p)),
                _ => touched.extend_from_slice(&lattice.corner_ids(&lattice.locate(p))),
            }
        }
        touched.sort_unstable();
        touched.dedup();
        let mut local = vec![u32::MAX; total];
        for (r, &id) in touched.iter().enumerate() {
            local[id] = r as u32;
        }
        (touched, local)
    };
    let coords = node_coord_buffer(lattice, nodes.iter().copied());
    let mlp_cache = mlp.forward_batch(&coords, nodes.len(), Mode::Eval, None)?;
    let k = mlp.output_dim();
    let (out, interp) = interpolate_rows(lattice, mlp_cache.output(), k, pts, mode, |id| {
        local[id] as usize
    });
    Ok((
        out,
        LatticeCache {
            interp,
            nodes,
            mlp_cache,
        },
    ))
}

/// Gradient of a scalar loss with respect to the MLP parameters, given its gradient at the
/// interpolated embeddings.
pub fn train_backward(
    mlp: &MlpParams,
    cache: &LatticeCache,
    upstream: Upstream<'_>,
) -> Result<GradientBuffer> {
    let k = cache.interp.k;
    let entries = upstream_entries(upstream, cache.interp.n, k)?;
    let mut node_grads = vec![0.0; cache.nodes.len() * k];
    cache.interp.scatter(&entries, &mut node_grads)?;
    mlp.backward(&cache.mlp_cache, Upstream::Dense(&node_grads), false)
}

pub(crate) fn upstream_entries(
    upstream: Upstream<'_>,
    n: usize,
    k: usize,
) -> Result<Vec<(usize, usize, f64)>> {
    match upstream {
        Upstream::Sparse(e) => Ok(e.to_vec()),
        Upstream::Dense(d) => {
            if d.len() != n * k {
                return Err(Error::DimensionMismatch {
                    expected: n * k,
                    actual: d.len(),
                    context: "upstream gradient",
                });
            }
            Ok(d.iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, &v)| (i / k, i % k, v))
                .collect())
        }
    }
}

/// Forward through a trainable table.
pub fn direct_forward(tbl: &DirectTable, pts: &[Point], mode: EmbedMode) -> (Vec<f64>, InterpCache) {
    interpolate_rows(&tbl.lattice, &tbl.data, tbl.k, pts, mode, |id| id)
}

/// Table-shaped gradient from an upstream embedding gradient.
pub fn direct_backward(tbl: &DirectTable, cache: &InterpCache, upstream: Upstream<'_>) -> Result<Vec<f64>> {
    let entries = upstream_entries(upstream, cache.n, cache.k)?;
    let mut g = vec![0.0; tbl.data.len()];
    cache.scatter(&entries, &mut g)?;
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TvNorm {
    L1,
    L2,
}

impl TvNorm {
    pub fn from_p(p: u32) -> Result<Self> {
        match p {
            1 => Ok(TvNorm::L1),
            2 => Ok(TvNorm::L2),
            _ => Err(Error::invalid(format!("tv norm must be 1 or 2, got {p}"))),
        }
    }
}

/// Total variation `Σ_{(i,j) adjacent} Σ_c |w_ic - w_jc|^p` over the 6-neighbour lattice
/// adjacency (each unordered pair once) and its gradient with respect to the table.
pub fn tv_regularizer(tbl: &DirectTable, norm: TvNorm) -> (f64, Vec<f64>) {
    let lat = &tbl.lattice;
    let (d, k) = (lat.d(), tbl.k);
    let mut value = 0.0;
    let mut grad = vec![0.0; tbl.data.len()];
    let strides = [d * d, d, 1];
    for node in 0..lat.node_count() {
        let idx = lat.node_indices(node);
        for a in 0..3 {
            if idx[a] + 1 >= d {
                continue;
            }
            let other = node + strides[a];
            for c in 0..k {
                let diff = tbl.data[node * k + c] - tbl.data[other * k + c];
                let (v, g) = match norm {
                    TvNorm::L1 => (diff.abs(), if diff > 0.0 { 1.0 } else if diff < 0.0 { -1.0 } else { 0.0 }),
                    TvNorm::L2 => (diff * diff, 2.0 * diff),
                };
                value += v;
                grad[node * k + c] += g;
                grad[other * k + c] -= g;
            }
        }
    }
    (value, grad)
}
