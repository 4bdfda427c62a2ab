//! Shared test oracles: a dense 3D grid with naive convolution loops,
//! independent of the sparse gather/scatter implementations it checks.

use fpcw_core::sparse::{Coord, Grid, SparseKernel, SparseVoxelTensor};
use fpcw_core::tensor::Matrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(n: usize, c: usize, grid: Grid, seed: u64) -> SparseVoxelTensor {
    let mut rng = rng(seed);
    let mut set = std::collections::BTreeSet::new();
    while set.len() < n {
        set.insert([
            rng.gen_range(0..grid[0]),
            rng.gen_range(0..grid[1]),
            rng.gen_range(0..grid[2]),
        ]);
    }
    let coords: Vec<Coord> = set.into_iter().collect();
    let attrs = Matrix::new(n, c, (0..n * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    SparseVoxelTensor::new(coords, attrs, grid).unwrap()
}

/// Dense zero-filled grid holding the tensor's attributes; inactive cells
/// contribute zero, matching the sparse semantics.
pub struct DenseGrid {
    pub grid: Grid,
    pub channels: usize,
    data: Vec<f64>,
}

impl DenseGrid {
    pub fn from_sparse(t: &SparseVoxelTensor) -> Self {
        let grid = t.grid();
        let channels = t.channels();
        let volume = (grid[0] * grid[1] * grid[2]) as usize;
        let mut data = vec![0.0; volume * channels];
        for (row, c) in t.coords().iter().enumerate() {
            let base = Self::cell_index(grid, *c) * channels;
            data[base..base + channels].copy_from_slice(t.attrs().row(row));
        }
        Self {
            grid,
            channels,
            data,
        }
    }

    fn cell_index(grid: Grid, c: Coord) -> usize {
        ((c[0] * grid[1] + c[1]) * grid[2] + c[2]) as usize
    }

    /// Attribute at a (possibly out-of-grid) position; outside taps are zero.
    pub fn at(&self, p: [i64; 3], ch: usize) -> f64 {
        if p.iter().any(|&v| v < 0)
            || p[0] >= self.grid[0] as i64
            || p[1] >= self.grid[1] as i64
            || p[2] >= self.grid[2] as i64
        {
            return 0.0;
        }
        let c = [p[0] as u32, p[1] as u32, p[2] as u32];
        self.data[Self::cell_index(self.grid, c) * self.channels + ch]
    }
}

/// Dense gather convolution at one output site with centered offsets.
pub fn dense_submanifold_at(dense: &DenseGrid, k: &SparseKernel, p: Coord) -> Vec<f64> {
    let mut out = vec![0.0; k.c_out];
    for (oi, off) in k.offsets().iter().enumerate() {
        let q = [
            p[0] as i64 + k.dilation as i64 * off[0],
            p[1] as i64 + k.dilation as i64 * off[1],
            p[2] as i64 + k.dilation as i64 * off[2],
        ];
        for co in 0..k.c_out {
            for ci in 0..k.c_in {
                out[co] += dense.at(q, ci) * k.weight(oi, ci, co);
            }
        }
    }
    if let Some(b) = &k.bias {
        for (v, b) in out.iter_mut().zip(b) {
            *v += b;
        }
    }
    out
}

/// Dense strided (2x2x2, stride 2) convolution at one output site.
pub fn dense_strided_at(dense: &DenseGrid, k: &SparseKernel, q: Coord) -> Vec<f64> {
    let mut out = vec![0.0; k.c_out];
    for (oi, off) in k.offsets().iter().enumerate() {
        let p = [
            2 * q[0] as i64 + off[0],
            2 * q[1] as i64 + off[1],
            2 * q[2] as i64 + off[2],
        ];
        for co in 0..k.c_out {
            for ci in 0..k.c_in {
                out[co] += dense.at(p, ci) * k.weight(oi, ci, co);
            }
        }
    }
    if let Some(b) = &k.bias {
        for (v, b) in out.iter_mut().zip(b) {
            *v += b;
        }
    }
    out
}

/// Dense transposed (2x2x2, stride 2) convolution at one output site: the
/// parent cell is unique because kernel size equals stride.
pub fn dense_transposed_at(dense: &DenseGrid, k: &SparseKernel, q: Coord) -> Vec<f64> {
    let parent = [q[0] as i64 / 2, q[1] as i64 / 2, q[2] as i64 / 2];
    let off = [
        q[0] as i64 - 2 * parent[0],
        q[1] as i64 - 2 * parent[1],
        q[2] as i64 - 2 * parent[2],
    ];
    let oi = k.offsets().iter().position(|o| *o == off).unwrap();
    let mut out = vec![0.0; k.c_out];
    for co in 0..k.c_out {
        for ci in 0..k.c_in {
            out[co] += dense.at(parent, ci) * k.weight(oi, ci, co);
        }
    }
    if let Some(b) = &k.bias {
        for (v, b) in out.iter_mut().zip(b) {
            *v += b;
        }
    }
    out
}
