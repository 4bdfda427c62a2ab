//! Sparse voxel tensors and the sparse 3D convolution variants used by the
//! compaction and upsampling blocks: submanifold (stride 1, optional
//! dilation), strided downsampling, transposed upsampling, plus channel
//! concatenation and geometry upscaling.
//!
//! Coordinates are kept in canonical lexicographic (u, v, w) order with w as
//! the fastest-varying component, so identical inputs always produce
//! identical row layouts.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{seeded_init, InitScheme, Matrix};

pub type Coord = [u32; 3];
pub type Grid = [u32; 3];

/// Sparse tensor: unique voxel coordinates plus one attribute row per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVoxelTensor {
    coords: Vec<Coord>,
    attrs: Matrix,
    grid: Grid,
}

impl SparseVoxelTensor {
    /// Builds a tensor, sorting rows into canonical order and validating
    /// uniqueness and grid bounds.
    pub fn new(coords: Vec<Coord>, attrs: Matrix, grid: Grid) -> Result<Self> {
        if coords.len() != attrs.rows {
            return Err(Error::Shape(format!(
                "{} coords vs {} attr rows",
                coords.len(),
                attrs.rows
            )));
        }
        if grid.contains(&0) {
            return Err(Error::Config("grid extents must be positive".into()));
        }
        for c in &coords {
            if c[0] >= grid[0] || c[1] >= grid[1] || c[2] >= grid[2] {
                return Err(Error::Invariant(format!(
                    "coord {c:?} outside grid {grid:?}"
                )));
            }
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&i| coords[i]);
        for pair in order.windows(2) {
            if coords[pair[0]] == coords[pair[1]] {
                return Err(Error::Invariant(format!(
                    "duplicate coord {:?}",
                    coords[pair[0]]
                )));
            }
        }
        let sorted_coords: Vec<Coord> = order.iter().map(|&i| coords[i]).collect();
        let rows: Vec<Vec<f64>> = order.iter().map(|&i| attrs.row(i).to_vec()).collect();
        let mut sorted_attrs = Matrix::zeros(coords.len(), attrs.cols);
        for (r, row) in rows.iter().enumerate() {
            sorted_attrs.row_mut(r).copy_from_slice(row);
        }
        Ok(Self {
            coords: sorted_coords,
            attrs: sorted_attrs,
            grid,
        })
    }

    pub fn empty(channels: usize, grid: Grid) -> Self {
        Self {
            coords: Vec::new(),
            attrs: Matrix::zeros(0, channels),
            grid,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.attrs.cols
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn attrs(&self) -> &Matrix {
        &self.attrs
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Replaces the attribute matrix, keeping coordinates (row count must match).
    pub fn with_attrs(&self, attrs: Matrix) -> Result<Self> {
        if attrs.rows != self.coords.len() {
            return Err(Error::Shape(format!(
                "attr rows {} != voxel count {}",
                attrs.rows,
                self.coords.len()
            )));
        }
        Ok(Self {
            coords: self.coords.clone(),
            attrs,
            grid: self.grid,
        })
    }

    fn index_map(&self) -> HashMap<Coord, usize> {
        self.coords
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect()
    }

    /// Text fixture format: header `n c gu gv gw`, then `u v w a1 .. ac` per voxel.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            self.len(),
            self.channels(),
            self.grid[0],
            self.grid[1],
            self.grid[2]
        );
        for (i, c) in self.coords.iter().enumerate() {
            let _ = write!(out, "{} {} {}", c[0], c[1], c[2]);
            for v in self.attrs.row(i) {
                let _ = write!(out, " {v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Decode("empty tensor text".into()))?;
        let head: Vec<u64> = header
            .split_whitespace()
            .map(|t| t.parse::<u64>().map_err(|_| Error::Decode(format!("bad header token '{t}'"))))
            .collect::<Result<_>>()?;
        if head.len() != 5 {
            return Err(Error::Decode("tensor header needs 5 fields".into()));
        }
        let (n, c) = (head[0] as usize, head[1] as usize);
        let grid = [head[2] as u32, head[3] as u32, head[4] as u32];
        let mut coords = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * c);
        for _ in 0..n {
            let line = lines
                .next()
                .ok_or_else(|| Error::Decode("tensor text truncated".into()))?;
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() != 3 + c {
                return Err(Error::Decode(format!(
                    "voxel line has {} fields, expected {}",
                    toks.len(),
                    3 + c
                )));
            }
            let mut coord = [0u32; 3];
            for (k, slot) in coord.iter_mut().enumerate() {
                *slot = toks[k]
                    .parse()
                    .map_err(|_| Error::Decode(format!("bad coord '{}'", toks[k])))?;
            }
            coords.push(coord);
            for t in &toks[3..] {
                data.push(
                    t.parse()
                        .map_err(|_| Error::Decode(format!("bad attr '{t}'")))?,
                );
            }
        }
        SparseVoxelTensor::new(coords, Matrix::new(n, c, data)?, grid)
    }
}

/// Cubic sparse convolution kernel.
///
/// Weight layout is offset-major: `w[o][ci][co]` with offsets enumerated in
/// lexicographic (du, dv, dw) order over `[-k/2, k/2]^3` for odd kernels and
/// `[0, k)^3` for even (strided / transposed) kernels.
#[derive(Debug, Clone)]
pub struct SparseKernel {
    pub size: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<f64>,
    pub stride: usize,
    pub dilation: usize,
    pub bias: Option<Vec<f64>>,
}

impl SparseKernel {
    pub fn new(
        size: usize,
        c_in: usize,
        c_out: usize,
        weights: Vec<f64>,
        stride: usize,
        dilation: usize,
        bias: Option<Vec<f64>>,
    ) -> Result<Self> {
        let taps = size * size * size;
        if weights.len() != taps * c_in * c_out {
            return Err(Error::Shape(format!(
                "kernel weights length {} != {taps}x{c_in}x{c_out}",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Invariant("kernel weights must be finite".into()));
        }
        if stride == 0 || dilation == 0 {
            return Err(Error::Config("stride and dilation must be positive".into()));
        }
        if let Some(b) = &bias {
            if b.len() != c_out {
                return Err(Error::Shape("kernel bias length != c_out".into()));
            }
        }
        Ok(Self {
            size,
            c_in,
            c_out,
            weights,
            stride,
            dilation,
            bias,
        })
    }

    pub fn seeded(
        size: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        dilation: usize,
        seed: u64,
    ) -> Self {
        let taps = size * size * size;
        let weights = seeded_init(&[taps * c_in, c_out], seed, InitScheme::FanInUniform).unwrap();
        Self {
            size,
            c_in,
            c_out,
            weights,
            stride,
            dilation,
            bias: Some(vec![0.0; c_out]),
        }
    }

    /// 1x1x1 kernel passing `c` channels through unchanged.
    pub fn identity_1x1(c: usize) -> Self {
        let mut weights = vec![0.0; c * c];
        for i in 0..c {
            weights[i * c + i] = 1.0;
        }
        Self {
            size: 1,
            c_in: c,
            c_out: c,
            weights,
            stride: 1,
            dilation: 1,
            bias: None,
        }
    }

    #[inline]
    pub fn weight(&self, offset_idx: usize, ci: usize, co: usize) -> f64 {
        self.weights[(offset_idx * self.c_in + ci) * self.c_out + co]
    }

    /// Offsets in enumeration order; centered for odd sizes, origin-anchored
    /// for even sizes.
    pub fn offsets(&self) -> Vec<[i64; 3]> {
        let k = self.size as i64;
        let range: Vec<i64> = if k % 2 == 1 {
            (-(k / 2)..=(k / 2)).collect()
        } else {
            (0..k).collect()
        };
        let mut out = Vec::with_capacity((k * k * k) as usize);
        for &du in &range {
            for &dv in &range {
                for &dw in &range {
                    out.push([du, dv, dw]);
                }
            }
        }
        out
    }

    fn check_input(&self, t: &SparseVoxelTensor) -> Result<()> {
        if t.channels() != self.c_in {
            return Err(Error::Shape(format!(
                "kernel expects {} input channels, tensor has {}",
                self.c_in,
                t.channels()
            )));
        }
        Ok(())
    }
}

/// Submanifold convolution: output active set equals the input active set.
/// Neighbors are gathered at `p + dilation * offset`; taps outside the grid
/// or on inactive sites contribute zero.
pub fn submanifold_conv(t: &SparseVoxelTensor, k: &SparseKernel) -> Result<SparseVoxelTensor> {
    if k.stride != 1 {
        return Err(Error::Config("submanifold conv requires stride 1".into()));
    }
    if k.size % 2 == 0 {
        return Err(Error::Config("submanifold conv requires odd kernel size".into()));
    }
    k.check_input(t)?;

    let index = t.index_map();
    let offsets = k.offsets();
    let mut out = Matrix::zeros(t.len(), k.c_out);
    for (row, &p) in t.coords().iter().enumerate() {
        let acc = out.row_mut(row);
        for (oi, off) in offsets.iter().enumerate() {
            let q = [
                p[0] as i64 + k.dilation as i64 * off[0],
                p[1] as i64 + k.dilation as i64 * off[1],
                p[2] as i64 + k.dilation as i64 * off[2],
            ];
            if q.iter().any(|&v| v < 0)
                || q[0] >= t.grid()[0] as i64
                || q[1] >= t.grid()[1] as i64
                || q[2] >= t.grid()[2] as i64
            {
                continue;
            }
            let q = [q[0] as u32, q[1] as u32, q[2] as u32];
            if let Some(&src) = index.get(&q) {
                let attr = t.attrs().row(src);
                for co in 0..k.c_out {
                    let mut s = 0.0;
                    for (ci, a) in attr.iter().enumerate() {
                        s += a * k.weight(oi, ci, co);
                    }
                    acc[co] += s;
                }
            }
        }
        if let Some(b) = &k.bias {
            for (v, b) in acc.iter_mut().zip(b) {
                *v += b;
            }
        }
    }
    SparseVoxelTensor::new(t.coords().to_vec(), out, t.grid())
}

/// Downsampling convolution with kernel 2x2x2 and stride 2. The output
/// active set is the image of the input sites under floor division by 2;
/// each output voxel accumulates its up-to-eight covered input sites.
pub fn strided_conv(t: &SparseVoxelTensor, k: &SparseKernel) -> Result<SparseVoxelTensor> {
    if k.stride != 2 || k.size != 2 {
        return Err(Error::Config("strided conv requires 2x2x2 kernel with stride 2".into()));
    }
    k.check_input(t)?;

    let grid = t.grid();
    let out_grid = [
        grid[0].div_ceil(2),
        grid[1].div_ceil(2),
        grid[2].div_ceil(2),
    ];
    if t.is_empty() {
        return Ok(SparseVoxelTensor::empty(k.c_out, out_grid));
    }

    let mut parents: Vec<Coord> = t
        .coords()
        .iter()
        .map(|c| [c[0] / 2, c[1] / 2, c[2] / 2])
        .collect();
    parents.sort();
    parents.dedup();
    let parent_index: HashMap<Coord, usize> =
        parents.iter().enumerate().map(|(i, &c)| (c, i)).collect();

    let mut out = Matrix::zeros(parents.len(), k.c_out);
    let offsets = k.offsets();
    for (row, &p) in t.coords().iter().enumerate() {
        let q = [p[0] / 2, p[1] / 2, p[2] / 2];
        let off = [
            (p[0] - 2 * q[0]) as i64,
            (p[1] - 2 * q[1]) as i64,
            (p[2] - 2 * q[2]) as i64,
        ];
        let oi = offsets.iter().position(|o| *o == off).unwrap();
        let dst = parent_index[&q];
        let attr = t.attrs().row(row);
        let acc = out.row_mut(dst);
        for co in 0..k.c_out {
            let mut s = 0.0;
            for (ci, a) in attr.iter().enumerate() {
                s += a * k.weight(oi, ci, co);
            }
            acc[co] += s;
        }
    }
    if let Some(b) = &k.bias {
        for r in 0..out.rows {
            for (v, bv) in out.row_mut(r).iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    SparseVoxelTensor::new(parents, out, out_grid)
}

/// Transposed convolution with kernel 2x2x2 and stride 2: every input voxel
/// scatters into its eight children at doubled resolution; overlapping
/// scatters accumulate.
pub fn transposed_conv(t: &SparseVoxelTensor, k: &SparseKernel) -> Result<SparseVoxelTensor> {
    if k.stride != 2 || k.size != 2 {
        return Err(Error::Config(
            "transposed conv requires 2x2x2 kernel with stride 2".into(),
        ));
    }
    k.check_input(t)?;
    let out_grid = [t.grid()[0] * 2, t.grid()[1] * 2, t.grid()[2] * 2];
    let mut children: Vec<Coord> = Vec::with_capacity(t.len() * 8);
    for &p in t.coords() {
        for off in k.offsets() {
            children.push([
                2 * p[0] + off[0] as u32,
                2 * p[1] + off[1] as u32,
                2 * p[2] + off[2] as u32,
            ]);
        }
    }
    children.sort();
    children.dedup();
    transposed_scatter(t, k, children, out_grid)
}

/// Transposed convolution restricted to a caller-provided output active set,
/// used by the decoder path to mirror a matching strided layer: the output
/// coordinates are exactly `target`, so skip concatenation stays aligned.
pub fn transposed_conv_onto(
    t: &SparseVoxelTensor,
    k: &SparseKernel,
    target: &[Coord],
    target_grid: Grid,
) -> Result<SparseVoxelTensor> {
    if k.stride != 2 || k.size != 2 {
        return Err(Error::Config(
            "transposed conv requires 2x2x2 kernel with stride 2".into(),
        ));
    }
    k.check_input(t)?;
    transposed_scatter(t, k, target.to_vec(), target_grid)
}

fn transposed_scatter(
    t: &SparseVoxelTensor,
    k: &SparseKernel,
    out_coords: Vec<Coord>,
    out_grid: Grid,
) -> Result<SparseVoxelTensor> {
    let index = t.index_map();
    let offsets = k.offsets();
    let mut out = Matrix::zeros(out_coords.len(), k.c_out);
    for (row, &q) in out_coords.iter().enumerate() {
        let parent = [q[0] / 2, q[1] / 2, q[2] / 2];
        let off = [
            (q[0] - 2 * parent[0]) as i64,
            (q[1] - 2 * parent[1]) as i64,
            (q[2] - 2 * parent[2]) as i64,
        ];
        let acc = out.row_mut(row);
        if let Some(&src) = index.get(&parent) {
            let oi = offsets.iter().position(|o| *o == off).unwrap();
            let attr = t.attrs().row(src);
            for co in 0..k.c_out {
                let mut s = 0.0;
                for (ci, a) in attr.iter().enumerate() {
                    s += a * k.weight(oi, ci, co);
                }
                acc[co] += s;
            }
        }
        if let Some(b) = &k.bias {
            for (v, bv) in acc.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    SparseVoxelTensor::new(out_coords, out, out_grid)
}

/// Channel-wise concatenation of two tensors over identical active sets.
pub fn concat_channels(
    a: &SparseVoxelTensor,
    b: &SparseVoxelTensor,
) -> Result<SparseVoxelTensor> {
    if a.grid() != b.grid() {
        return Err(Error::Alignment(format!(
            "grid mismatch {:?} vs {:?}",
            a.grid(),
            b.grid()
        )));
    }
    if a.coords() != b.coords() {
        return Err(Error::Alignment(format!(
            "active sets differ: {} vs {} voxels",
            a.len(),
            b.len()
        )));
    }
    let attrs = a.attrs().hconcat(b.attrs())?;
    SparseVoxelTensor::new(a.coords().to_vec(), attrs, a.grid())
}

/// How `geometry_upscale` expands coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpscaleMode {
    /// Every voxel becomes its 8 children at doubled resolution.
    Children8,
    /// Coordinates are doubled in place; voxel count preserved.
    ScaleOnly,
}

/// Doubles the geometry resolution of a tensor.
pub fn geometry_upscale(t: &SparseVoxelTensor, mode: UpscaleMode) -> SparseVoxelTensor {
    let out_grid = [t.grid()[0] * 2, t.grid()[1] * 2, t.grid()[2] * 2];
    match mode {
        UpscaleMode::ScaleOnly => {
            let coords = t
                .coords()
                .iter()
                .map(|c| [c[0] * 2, c[1] * 2, c[2] * 2])
                .collect();
            SparseVoxelTensor::new(coords, t.attrs().clone(), out_grid).unwrap()
        }
        UpscaleMode::Children8 => {
            let mut coords = Vec::with_capacity(t.len() * 8);
            let mut attrs = Matrix::zeros(t.len() * 8, t.channels());
            let mut row = 0;
            // input is canonical, children in octant order stay canonical
            for (i, &c) in t.coords().iter().enumerate() {
                for du in 0..2 {
                    for dv in 0..2 {
                        for dw in 0..2 {
                            coords.push([2 * c[0] + du, 2 * c[1] + dv, 2 * c[2] + dw]);
                            attrs.row_mut(row).copy_from_slice(t.attrs().row(i));
                            row += 1;
                        }
                    }
                }
            }
            SparseVoxelTensor::new(coords, attrs, out_grid).unwrap()
        }
    }
}

/// Averages point attributes into occupied voxels.
///
/// Points are binned by `floor(x / voxel_size)` per axis; each occupied voxel
/// carries the arithmetic mean of its member points' attributes. Points
/// mapping outside `grid` are an invariant violation.
pub fn voxelize(
    points: &[([f64; 3], Vec<f64>)],
    voxel_size: [f64; 3],
    grid: Grid,
) -> Result<SparseVoxelTensor> {
    if voxel_size.iter().any(|&s| s <= 0.0) {
        return Err(Error::Config("voxel sizes must be positive".into()));
    }
    let channels = points.first().map_or(0, |(_, a)| a.len());
    if points.is_empty() {
        return Ok(SparseVoxelTensor::empty(channels, grid));
    }
    let mut buckets: HashMap<Coord, (Vec<f64>, usize)> = HashMap::new();
    for (pos, attr) in points {
        if attr.len() != channels {
            return Err(Error::Shape("inconsistent point attribute widths".into()));
        }
        let mut coord = [0u32; 3];
        for axis in 0..3 {
            let idx = (pos[axis] / voxel_size[axis]).floor();
            if idx < 0.0 || idx >= grid[axis] as f64 {
                return Err(Error::Invariant(format!(
                    "point {pos:?} outside declared extent"
                )));
            }
            coord[axis] = idx as u32;
        }
        let slot = buckets
            .entry(coord)
            .or_insert_with(|| (vec![0.0; channels], 0));
        for (s, a) in slot.0.iter_mut().zip(attr) {
            *s += a;
        }
        slot.1 += 1;
    }
    let mut coords: Vec<Coord> = buckets.keys().copied().collect();
    coords.sort();
    let mut attrs = Matrix::zeros(coords.len(), channels);
    for (r, c) in coords.iter().enumerate() {
        let (sums, count) = &buckets[c];
        for (dst, s) in attrs.row_mut(r).iter_mut().zip(sums) {
            *dst = s / *count as f64;
        }
    }
    SparseVoxelTensor::new(coords, attrs, grid)
}
