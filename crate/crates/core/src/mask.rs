//! Object-relevance voxel masks from 3D bounding boxes, sparse label
//! intersection, and the focal loss used to train the relevance head.
//!
//! A voxel (u, v, w) belongs to a box when the normalized index u/L4 falls
//! inside the box's normalized extent [x/L - l/2L, x/L + l/2L] per axis,
//! with closed bounds. The expanded variant widens every axis by E/L4 in
//! normalized units before clipping to the grid.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::sparse::{Coord, Grid};

/// Axis-aligned object box in scene meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

impl BoundingBox {
    pub fn new(center: [f64; 3], size: [f64; 3]) -> Result<Self> {
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Invariant("box sizes must be positive".into()));
        }
        Ok(Self { center, size })
    }
}

/// Scene extent in meters, the feature-grid resolution it maps onto, and the
/// receptive-field expansion margin in voxels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub extent: [f64; 3],
    pub grid: Grid,
    pub expansion: u32,
}

impl SceneSpec {
    pub fn new(extent: [f64; 3], grid: Grid, expansion: u32) -> Result<Self> {
        if extent.iter().any(|&e| e <= 0.0) || grid.contains(&0) {
            return Err(Error::Config("scene extent and grid must be positive".into()));
        }
        Ok(Self {
            extent,
            grid,
            expansion,
        })
    }
}

/// Set of object-relevant voxels, kept sorted for deterministic iteration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoxelMask {
    pub relevant: BTreeSet<Coord>,
    pub grid: Grid,
}

impl VoxelMask {
    pub fn empty(grid: Grid) -> Self {
        Self {
            relevant: BTreeSet::new(),
            grid,
        }
    }

    pub fn contains(&self, c: &Coord) -> bool {
        self.relevant.contains(c)
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }
}

/// Normalized membership test for one axis: index/grid within
/// [center - half - margin, center + half + margin], closed on both sides.
#[inline]
fn axis_in_bounds(idx: u32, grid: u32, center: f64, half: f64, margin: f64) -> bool {
    let x = idx as f64 / grid as f64;
    x >= center - half - margin && x <= center + half + margin
}

fn box_voxels(bx: &BoundingBox, spec: &SceneSpec, margin_voxels: f64) -> Result<VoxelMask> {
    let mut per_axis: Vec<Vec<u32>> = Vec::with_capacity(3);
    for axis in 0..3 {
        let grid = spec.grid[axis];
        let center = bx.center[axis] / spec.extent[axis];
        let half = bx.size[axis] / (2.0 * spec.extent[axis]);
        let margin = margin_voxels / grid as f64;

        // Candidate window from the algebraic bounds, widened by a couple of
        // voxels so float rounding can never drop a boundary index; the exact
        // normalized predicate then decides membership.
        let lo_est = ((center - half - margin) * grid as f64).floor() as i64 - 2;
        let hi_est = ((center + half + margin) * grid as f64).ceil() as i64 + 2;
        let lo = lo_est.max(0) as u32;
        let hi = (hi_est.min(grid as i64 - 1)).max(-1);
        let mut hits = Vec::new();
        if hi >= 0 {
            for idx in lo..=hi as u32 {
                if axis_in_bounds(idx, grid, center, half, margin) {
                    hits.push(idx);
                }
            }
        }
        per_axis.push(hits);
    }
    let mut mask = VoxelMask::empty(spec.grid);
    for &u in &per_axis[0] {
        for &v in &per_axis[1] {
            for &w in &per_axis[2] {
                mask.relevant.insert([u, v, w]);
            }
        }
    }
    Ok(mask)
}

/// Voxels whose normalized indices fall inside the box extent (no margin).
pub fn preliminary_voxels(bx: &BoundingBox, spec: &SceneSpec) -> Result<VoxelMask> {
    box_voxels(bx, spec, 0.0)
}

/// Voxels inside the box extent widened by the receptive-field expansion.
pub fn expanded_voxels(bx: &BoundingBox, spec: &SceneSpec) -> Result<VoxelMask> {
    box_voxels(bx, spec, spec.expansion as f64)
}

/// Union of expanded masks over all boxes.
pub fn merge_boxes(boxes: &[BoundingBox], spec: &SceneSpec) -> Result<VoxelMask> {
    let mut mask = VoxelMask::empty(spec.grid);
    for bx in boxes {
        let m = expanded_voxels(bx, spec)?;
        mask.relevant.extend(m.relevant);
    }
    Ok(mask)
}

/// Binary labels for a sparse active set: 1 where the coordinate is in the
/// mask, aligned with the given (canonical) coordinate order.
pub fn sparse_labels(mask: &VoxelMask, active: &[Coord]) -> Vec<u8> {
    active
        .iter()
        .map(|c| u8::from(mask.contains(c)))
        .collect()
}

/// Probability clamp used before taking logs.
pub const PROB_EPS: f64 = 1e-7;

/// Focal loss over per-voxel probabilities and binary labels:
/// `-Σ [(1-p)^γ y log p + p^γ (1-y) log(1-p)]`.
pub fn focal_loss(probs: &[f64], labels: &[u8], gamma: f64) -> Result<f64> {
    if probs.len() != labels.len() {
        return Err(Error::Shape(format!(
            "focal loss lengths differ: {} probs vs {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut loss = 0.0;
    for (&p, &y) in probs.iter().zip(labels) {
        let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
        if y == 1 {
            loss -= (1.0 - p).powf(gamma) * p.ln();
        } else {
            loss -= p.powf(gamma) * (1.0 - p).ln();
        }
    }
    Ok(loss)
}

/// Phase-one training objective: the voxel-relevance focal loss plus an
/// externally supplied task loss weighted by `alpha`. The task term comes
/// from a downstream detector this simulator does not include, so the hook
/// takes its value directly; `None` means mask-only training.
pub fn phase_one_loss(
    probs: &[f64],
    labels: &[u8],
    gamma: f64,
    alpha: f64,
    task_loss: Option<f64>,
) -> Result<f64> {
    Ok(focal_loss(probs, labels, gamma)? + alpha * task_loss.unwrap_or(0.0))
}
