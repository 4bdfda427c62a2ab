//! Every sparse convolution variant against the dense-grid oracle on small
//! grids, restricted to the declared output active set.

mod common;

use common::{
    dense_strided_at, dense_submanifold_at, dense_transposed_at, random_tensor, DenseGrid,
};
use fpcw_core::sparse::{
    strided_conv, submanifold_conv, transposed_conv, SparseKernel,
};
use rand::Rng;

const TOL: f64 = 1e-10;

#[test]
fn submanifold_matches_dense_oracle() {
    for seed in 0..12 {
        let mut r = common::rng(900 + seed);
        let grid = [
            r.gen_range(4..=16u32),
            r.gen_range(4..=16u32),
            r.gen_range(4..=16u32),
        ];
        let max_n = (grid[0] * grid[1] * grid[2]).min(80) as usize;
        let t = random_tensor(r.gen_range(1..=max_n), 3, grid, 1000 + seed);
        let mut k = SparseKernel::seeded(3, 3, 4, 1, 1, 2000 + seed);
        k.bias = Some(vec![0.3, -0.1, 0.0, 0.7]);
        let out = submanifold_conv(&t, &k).unwrap();
        let dense = DenseGrid::from_sparse(&t);
        for (row, &p) in out.coords().iter().enumerate() {
            let expected = dense_submanifold_at(&dense, &k, p);
            for co in 0..4 {
                assert!(
                    (out.attrs().get(row, co) - expected[co]).abs() < TOL,
                    "seed {seed} voxel {p:?} ch {co}"
                );
            }
        }
    }
}

#[test]
fn dilated_submanifold_matches_dense_oracle() {
    for seed in 0..12 {
        let mut r = common::rng(910 + seed);
        let grid = [16, 12, r.gen_range(6..=16u32)];
        let t = random_tensor(r.gen_range(1..=60), 2, grid, 1100 + seed);
        let mut k = SparseKernel::seeded(3, 2, 2, 1, 2, 2100 + seed);
        k.dilation = 2;
        let out = submanifold_conv(&t, &k).unwrap();
        let dense = DenseGrid::from_sparse(&t);
        for (row, &p) in out.coords().iter().enumerate() {
            let expected = dense_submanifold_at(&dense, &k, p);
            for co in 0..2 {
                assert!((out.attrs().get(row, co) - expected[co]).abs() < TOL);
            }
        }
    }
}

#[test]
fn strided_matches_dense_oracle() {
    for seed in 0..12 {
        let mut r = common::rng(920 + seed);
        let grid = [
            r.gen_range(4..=16u32),
            r.gen_range(4..=16u32),
            r.gen_range(4..=16u32),
        ];
        let max_n = (grid[0] * grid[1] * grid[2]).min(70) as usize;
        let t = random_tensor(r.gen_range(1..=max_n), 2, grid, 1200 + seed);
        let k = SparseKernel::seeded(2, 2, 3, 2, 1, 2200 + seed);
        let out = strided_conv(&t, &k).unwrap();
        let dense = DenseGrid::from_sparse(&t);

        // declared active set is the floor-division image of the input sites
        let mut expected_coords: Vec<_> = t
            .coords()
            .iter()
            .map(|c| [c[0] / 2, c[1] / 2, c[2] / 2])
            .collect();
        expected_coords.sort();
        expected_coords.dedup();
        assert_eq!(out.coords(), expected_coords.as_slice());

        for (row, &q) in out.coords().iter().enumerate() {
            let expected = dense_strided_at(&dense, &k, q);
            for co in 0..3 {
                assert!((out.attrs().get(row, co) - expected[co]).abs() < TOL);
            }
        }
    }
}

/// The three-conv noise predictor chain against the dense oracle applied
/// stage by stage (ReLU between the first two convolutions).
#[test]
fn noise_predictor_chain_matches_dense_oracle() {
    use fpcw_core::tensor::Matrix;
    use fpcw_core::upsampler::{predict_noise, time_embedding, Branch, UpsamplerModel};

    for seed in 0..6 {
        let model = UpsamplerModel::seeded(800 + seed);
        let fused = random_tensor(10, 3, [12, 12, 12], 1400 + seed);
        let te = time_embedding(1, 1, Branch::Geometry, &model).unwrap();
        let got = predict_noise(Branch::Geometry, &fused, &te, &model).unwrap();

        // stage 0: add the embedding
        let mut attrs = fused.attrs().clone();
        for r in 0..attrs.rows {
            for (v, t) in attrs.row_mut(r).iter_mut().zip(&te) {
                *v += t;
            }
        }
        let mut stage = fused.with_attrs(attrs).unwrap();
        let convs = [&model.pred_g.conv1, &model.pred_g.conv2, &model.pred_g.conv3];
        for (ci, k) in convs.iter().enumerate() {
            let dense = DenseGrid::from_sparse(&stage);
            let mut out = Matrix::zeros(stage.len(), k.c_out);
            for (row, &p) in stage.coords().iter().enumerate() {
                let mut vals = dense_submanifold_at(&dense, k, p);
                if ci < 2 {
                    for v in vals.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
                out.row_mut(row).copy_from_slice(&vals);
            }
            stage = stage.with_attrs(out).unwrap();
        }
        for (a, b) in got.data().iter().zip(stage.attrs().data()) {
            assert!((a - b).abs() < TOL, "seed {seed}");
        }
    }
}

#[test]
fn transposed_matches_dense_oracle() {
    for seed in 0..12 {
        let mut r = common::rng(930 + seed);
        let grid = [8, r.gen_range(4..=8u32), 8];
        let max_n = (grid[0] * grid[1] * grid[2]).min(50) as usize;
        let t = random_tensor(r.gen_range(1..=max_n), 3, grid, 1300 + seed);
        let k = SparseKernel::seeded(2, 3, 2, 2, 1, 2300 + seed);
        let out = transposed_conv(&t, &k).unwrap();
        let dense = DenseGrid::from_sparse(&t);
        for (row, &q) in out.coords().iter().enumerate() {
            let expected = dense_transposed_at(&dense, &k, q);
            for co in 0..2 {
                assert!((out.attrs().get(row, co) - expected[co]).abs() < TOL);
            }
        }
    }
}
