use std::fmt::Write;

use crate::embed::Embedder;
use crate::error::{Error, Result};

/// Channel values sampled on a `res × res` grid of the plane `z = const` over `[-1, 1]²`.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceGrid {
    pub z: f64,
    pub res: usize,
    pub channels: Vec<usize>,
    /// Row-major over `(ix, iy)`: `values[(ix * res + iy) * channels.len() + j]`.
    pub values: Vec<f64>,
}

impl SliceGrid {
    pub fn coord(&self, i: usize) -> f64 {
        let t = i as f64 / (self.res - 1) as f64;
        -(1.0 - t) + t
    }

    pub fn value(&self, ix: usize, iy: usize, j: usize) -> f64 {
        self.values[(ix * self.res + iy) * self.channels.len() + j]
    }

    /// Whitespace-separated table with a header line: `x y c<ch>...`.
    pub fn to_table(&self) -> String {
        let mut s = String::from("x y");
        for c in &self.channels {
            let _ = write!(s, " c{c}");
        }
        s.push('\n');
        for ix in 0..self.res {
            for iy in 0..self.res {
                let _ = write!(s, "{} {}", self.coord(ix), self.coord(iy));
                for j in 0..self.channels.len() {
                    let _ = write!(s, " {}", self.value(ix, iy, j));
                }
                s.push('\n');
            }
        }
        s
    }
}

pub fn dump_slice(emb: &dyn Embedder, z: f64, channels: &[usize], res: usize) -> Result<SliceGrid> {
    if res < 2 {
        return Err(Error::invalid("slice resolution must be at least 2"));
    }
    if let Some(&c) = channels.iter().find(|&&c| c >= emb.dim()) {
        return Err(Error::invalid(format!("channel {c} out of range for width {}", emb.dim())));
    }
    let mut grid = SliceGrid {
        z,
        res,
        channels: channels.to_vec(),
        values: Vec::with_capacity(res * res * channels.len()),
    };
    let mut pts = Vec::with_capacity(res * res);
    for ix in 0..res {
        for iy in 0..res {
            pts.push([grid.coord(ix), grid.coord(iy), z]);
        }
    }
    let k = emb.dim();
    let all = emb.embed_points(&pts);
    for row in all.chunks_exact(k) {
        grid.values.extend(channels.iter().map(|&c| row[c]));
    }
    Ok(grid)
}
