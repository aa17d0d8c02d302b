//! Randomized properties of the public API.
//!
//! Each block states an algebraic law the implementation must satisfy on
//! arbitrary well-conditioned inputs: operator adjointness, linearity,
//! mass conservation, bitwise determinism, factorization and mean-space
//! guarantees, metric symmetries, and file round-trips.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use resplat::geometry::{
    closest_rot_scale, karcher_mean, matrix_exp, mean_space, real_log, AffineMap, GridSpec,
    SpaceDescriptor,
};
use resplat::gridops::{
    affine_grid, apply_matrix, as_matrix, pull, push, push_with, Exec, OperatorKind,
};
use resplat::io::{read_volume, write_volume, Datatype};
use resplat::pipeline::{dice, hard_labels, softmax};
use resplat::volume::{Volume, VolumeKind};

fn linear_part(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (
        prop::collection::vec(0.5f64..2.0, d),
        prop::collection::vec(-0.25f64..0.25, d * d),
    )
        .prop_map(move |(diag, off)| {
            DMatrix::from_fn(d, d, |i, j| {
                off[i * d + j] + if i == j { diag[i] } else { 0.0 }
            })
        })
        .prop_filter("well-conditioned", |m| m.clone().determinant() > 0.1)
}

fn grid(d: usize, max_len: usize) -> impl Strategy<Value = GridSpec> {
    (
        prop::collection::vec(2usize..=max_len, d),
        linear_part(d),
        prop::collection::vec(-3.0f64..3.0, d),
    )
        .prop_map(|(dims, linear, t)| {
            let affine = AffineMap::from_parts(&linear, &DVector::from_vec(t)).unwrap();
            GridSpec::new(dims, affine).unwrap()
        })
}

fn any_grid(max_len: usize) -> impl Strategy<Value = GridSpec> {
    (1usize..=3).prop_flat_map(move |d| grid(d, max_len))
}

fn grid_pair(max_len: usize) -> impl Strategy<Value = (GridSpec, GridSpec)> {
    (1usize..=3).prop_flat_map(move |d| (grid(d, max_len), grid(d, max_len)))
}

fn volume_on(g: &GridSpec, channels: usize) -> impl Strategy<Value = Volume> {
    let g = g.clone();
    prop::collection::vec(-10.0f64..10.0, channels * g.numel()).prop_map(move |data| {
        Volume::new(g.clone(), channels, data, VolumeKind::Continuous).unwrap()
    })
}

fn cross_grid_volumes(max_len: usize) -> impl Strategy<Value = (Volume, Volume)> {
    grid_pair(max_len).prop_flat_map(|(src, dst)| (volume_on(&src, 1), volume_on(&dst, 1)))
}

fn log_matrix(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-0.4f64..0.4, d * d)
        .prop_map(move |v| DMatrix::from_fn(d, d, |i, j| v[i * d + j]))
}

fn any_log_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=3).prop_flat_map(log_matrix)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pull_and_push_are_adjoint((f, g) in cross_grid_volumes(5)) {
        let pulled = pull(&f, g.grid()).unwrap();
        let pushed = push(&g, f.grid()).unwrap();
        let lhs = dot(pulled.data(), g.data());
        let rhs = dot(f.data(), pushed.pushed.data());
        let scale = 1.0 + lhs.abs().max(rhs.abs());
        prop_assert!(
            (lhs - rhs).abs() <= 1e-10 * scale,
            "<pull f, g> = {} vs <f, push g> = {}", lhs, rhs
        );
    }

    #[test]
    fn pull_is_linear(
        (fa, fb, dst) in grid_pair(5).prop_flat_map(|(src, dst)| {
            (volume_on(&src, 1), volume_on(&src, 1), Just(dst))
        }),
        alpha in -2.0f64..2.0,
        beta in -2.0f64..2.0,
    ) {
        let combo: Vec<f64> = fa
            .data()
            .iter()
            .zip(fb.data())
            .map(|(a, b)| alpha * a + beta * b)
            .collect();
        let fc = Volume::new(fa.grid().clone(), 1, combo, VolumeKind::Continuous).unwrap();

        let pa = pull(&fa, &dst).unwrap();
        let pb = pull(&fb, &dst).unwrap();
        let pc = pull(&fc, &dst).unwrap();
        for ((a, b), c) in pa.data().iter().zip(pb.data()).zip(pc.data()) {
            let want = alpha * a + beta * b;
            prop_assert!((want - c).abs() <= 1e-12 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn pulled_ones_stay_in_unit_range_and_are_one_inside((src, dst) in grid_pair(5)) {
        let pulled = pull(&Volume::ones(src.clone(), 1), &dst).unwrap();
        let field = affine_grid(&src, &dst).unwrap();
        for (lin, &value) in pulled.data().iter().enumerate() {
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&value));
            let p = field.point(&dst.voxel_index(lin));
            let interior = p.iter().zip(src.dims()).all(|(&x, &n)| {
                x >= 0.0 && x.floor() <= n as f64 - 2.0
            });
            if interior {
                prop_assert!((value - 1.0).abs() <= 1e-12, "interior weight sum {}", value);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn push_conserves_mass_into_a_covering_grid(
        (f, margin) in (1usize..=3)
            .prop_flat_map(|d| grid(d, 4))
            .prop_flat_map(|src| (volume_on(&src, 1), 1usize..=3)),
    ) {
        let src = f.grid();
        let d = src.dim();
        let dims: Vec<usize> = src.dims().iter().map(|&n| n + 2 * margin).collect();
        let linear = src.affine().linear();
        let shift = DVector::from_element(d, -(margin as f64));
        let translation = src.affine().translation() + &linear * shift;
        let dst =
            GridSpec::new(dims, AffineMap::from_parts(&linear, &translation).unwrap()).unwrap();

        let result = push(&f, &dst).unwrap();
        let mass_in: f64 = f.data().iter().sum();
        let mass_out: f64 = result.pushed.data().iter().sum();
        let scale = 1.0 + f.data().iter().map(|x| x.abs()).sum::<f64>();
        prop_assert!((mass_in - mass_out).abs() <= 1e-12 * scale);

        let count_sum: f64 = result.count.data().iter().sum();
        prop_assert!(
            (count_sum - src.numel() as f64).abs() <= 1e-12 * (1.0 + src.numel() as f64)
        );
    }

    #[test]
    fn count_image_is_the_push_of_ones((f, g) in cross_grid_volumes(5)) {
        let result = push(&f, g.grid()).unwrap();
        let ones = push(&Volume::ones(f.grid().clone(), 1), g.grid()).unwrap();
        prop_assert_eq!(result.count.data(), ones.pushed.data());
        for (&p, &c) in result.pushed.data().iter().zip(result.count.data()) {
            if c == 0.0 {
                prop_assert_eq!(p, 0.0);
            }
        }
    }

    #[test]
    fn operators_match_their_matrix_form((f, g) in cross_grid_volumes(4)) {
        let dst = g.grid();
        let pulled = pull(&f, dst).unwrap();
        let pull_op = as_matrix(f.grid(), dst, OperatorKind::Pull).unwrap();
        let via_matrix = apply_matrix(&pull_op, &f).unwrap();
        for (a, b) in pulled.data().iter().zip(via_matrix.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        let pushed = push(&g, f.grid()).unwrap();
        let push_op = as_matrix(dst, f.grid(), OperatorKind::Push).unwrap();
        let via_matrix = apply_matrix(&push_op, &g).unwrap();
        for (a, b) in pushed.pushed.data().iter().zip(via_matrix.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn deterministic_push_is_thread_count_invariant((f, g) in cross_grid_volumes(5)) {
        let dst = g.grid();
        let serial = push_with(&f, dst, &Exec::serial()).unwrap();
        for threads in [2usize, 3, 5, 8] {
            let exec = Exec { threads, deterministic: true };
            let parallel = push_with(&f, dst, &exec).unwrap();
            prop_assert_eq!(serial.pushed.data(), parallel.pushed.data());
            prop_assert_eq!(serial.count.data(), parallel.count.data());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn compose_with_inverse_is_identity(g in any_grid(3)) {
        let a = g.affine().clone();
        let d = a.dim();
        let inv = a.invert().unwrap();
        let round = a.compose(&inv).unwrap();
        let identity = AffineMap::identity(d);
        for (x, y) in round.matrix().iter().zip(identity.matrix().iter()) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
        let p: Vec<f64> = (0..d).map(|i| 0.7 * i as f64 - 1.3).collect();
        let q = inv.apply(&a.apply(&p));
        for (x, y) in p.iter().zip(&q) {
            prop_assert!((x - y).abs() <= 1e-10);
        }
    }

    #[test]
    fn exp_and_log_invert_each_other(l in any_log_matrix()) {
        let m = matrix_exp(&l);
        let back = real_log(&m).unwrap();
        for (x, y) in back.iter().zip(l.iter()) {
            prop_assert!((x - y).abs() <= 1e-9, "log(exp(L)) strayed: {} vs {}", x, y);
        }
        let again = matrix_exp(&back);
        for (x, y) in again.iter().zip(m.iter()) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + y.abs()));
        }
    }
}

fn cohort(d: usize, count: usize) -> impl Strategy<Value = Vec<DMatrix<f64>>> {
    prop::collection::vec(log_matrix(d), count)
        .prop_map(|logs| logs.iter().map(matrix_exp).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn karcher_mean_ignores_input_order(
        (matrices, rotate_by) in (2usize..=3, 2usize..=4)
            .prop_flat_map(|(d, count)| (cohort(d, count), 0usize..4)),
    ) {
        let mut shuffled = matrices.clone();
        let len = shuffled.len();
        shuffled.rotate_left(rotate_by % len);

        let base = karcher_mean(&matrices).unwrap();
        let reordered = karcher_mean(&shuffled).unwrap();
        prop_assert_eq!(base, reordered);
    }

    #[test]
    fn karcher_mean_of_copies_is_the_matrix(
        (m, copies) in (2usize..=3)
            .prop_flat_map(log_matrix)
            .prop_map(|l| matrix_exp(&l))
            .prop_flat_map(|m| (Just(m), 1usize..=4)),
    ) {
        let cohort = vec![m.clone(); copies];
        prop_assert_eq!(karcher_mean(&cohort).unwrap(), m);
    }

    #[test]
    fn factorization_recovers_rotation_scale_products(
        theta in -3.0f64..3.0,
        sx in 0.4f64..2.2,
        sy in 0.4f64..2.2,
        fx in any::<bool>(),
        fy in any::<bool>(),
    ) {
        let rot = DMatrix::from_row_slice(2, 2, &[
            theta.cos(), -theta.sin(),
            theta.sin(), theta.cos(),
        ]);
        let fx = if fx { -1.0 } else { 1.0 };
        let fy = if fy { -1.0 } else { 1.0 };
        let diag = DMatrix::from_row_slice(2, 2, &[fx * sx, 0.0, 0.0, fy * sy]);
        let m = &rot * diag;

        let factors = closest_rot_scale(&m).unwrap();
        prop_assert!((factors.rotation.clone().determinant() - 1.0).abs() <= 1e-9);
        for (&s, &f) in factors.scales.iter().zip(&factors.flip) {
            prop_assert!(s > 0.0);
            prop_assert!(f == 1.0 || f == -1.0);
        }
        let back = factors.recompose();
        for (x, y) in back.iter().zip(m.iter()) {
            prop_assert!((x - y).abs() <= 1e-8, "recompose strayed: {} vs {}", x, y);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn mean_space_contains_every_input_fov(
        grids in (1usize..=3)
            .prop_flat_map(|d| prop::collection::vec(grid(d, 6), 2..=4)),
    ) {
        let result = mean_space(&grids, None).unwrap();
        let into_space = result.space.affine().invert().unwrap();
        for g in &grids {
            for corner in g.corner_points_world() {
                let v = into_space.apply(&corner);
                for (a, (&x, &n)) in v.iter().zip(result.space.dims()).enumerate() {
                    prop_assert!(
                        x >= -0.5 - 1e-9 && x <= n as f64 - 0.5 + 1e-9,
                        "axis {}: corner lands at {} outside [-0.5, {}]",
                        a, x, n as f64 - 0.5
                    );
                }
            }
        }

        for got in result.space.voxel_size() {
            prop_assert!((got - 1.0).abs() <= 1e-9, "default voxel size strayed: {}", got);
        }
        for &s in &result.scales {
            prop_assert!(s > 0.0);
        }
    }

    #[test]
    fn space_descriptor_json_round_trips_bitwise(g in any_grid(6)) {
        let descriptor = SpaceDescriptor::from_grid(&g);
        let parsed = SpaceDescriptor::from_json(&descriptor.to_json()).unwrap();
        prop_assert_eq!(&parsed, &descriptor);
        let back = parsed.to_grid().unwrap();
        prop_assert_eq!(back.dims(), g.dims());
        prop_assert_eq!(back.affine().matrix(), g.affine().matrix());
    }
}

const LABEL_PERMS: [[f64; 3]; 6] = [
    [1.0, 2.0, 3.0],
    [1.0, 3.0, 2.0],
    [2.0, 1.0, 3.0],
    [2.0, 3.0, 1.0],
    [3.0, 1.0, 2.0],
    [3.0, 2.0, 1.0],
];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dice_is_symmetric_and_relabeling_invariant(
        a in prop::collection::vec(0usize..4, 24),
        b in prop::collection::vec(0usize..4, 24),
        perm_index in 0usize..6,
    ) {
        let grid = GridSpec::isotropic(vec![24]).unwrap();
        let to_labels = |v: &[usize]| {
            Volume::labels(grid.clone(), v.iter().map(|&x| x as f64).collect()).unwrap()
        };
        let va = to_labels(&a);
        let vb = to_labels(&b);

        let forward = dice(&va, &vb, 4).unwrap();
        let backward = dice(&vb, &va, 4).unwrap();
        prop_assert_eq!(&forward, &backward);

        let same = dice(&va, &va, 4).unwrap();
        prop_assert_eq!(same, vec![1.0; 3]);

        let perm = LABEL_PERMS[perm_index];
        let relabel = |v: &[usize]| {
            let data = v
                .iter()
                .map(|&x| if x == 0 { 0.0 } else { perm[x - 1] })
                .collect();
            Volume::labels(grid.clone(), data).unwrap()
        };
        let permuted = dice(&relabel(&a), &relabel(&b), 4).unwrap();
        for k in 1..4usize {
            let image = perm[k - 1] as usize;
            prop_assert_eq!(permuted[image - 1], forward[k - 1]);
        }
    }

    #[test]
    fn softmax_normalizes_and_preserves_argmax(
        (k, data) in (2usize..=4)
            .prop_flat_map(|k| (Just(k), prop::collection::vec(-15.0f64..15.0, k * 12))),
    ) {
        let grid = GridSpec::isotropic(vec![12]).unwrap();
        let logits = Volume::new(grid, k, data, VolumeKind::Continuous).unwrap();
        let soft = softmax(&logits).unwrap();
        for v in 0..12 {
            let mut sum = 0.0;
            for c in 0..k {
                let p = soft.channel(c)[v];
                prop_assert!(p > 0.0 && p < 1.0);
                sum += p;
            }
            prop_assert!((sum - 1.0).abs() <= 1e-12);
        }
        let from_soft = hard_labels(&soft).unwrap();
        let from_logits = hard_labels(&logits).unwrap();
        prop_assert_eq!(from_soft.data(), from_logits.data());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn volume_files_round_trip(
        v in (1usize..=3)
            .prop_flat_map(|channels| {
                let g = if channels == 1 {
                    any_grid(5).boxed()
                } else {
                    grid(3, 5).boxed()
                };
                g.prop_flat_map(move |g| volume_on(&g, channels))
            }),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("prop.nii");
        write_volume(&v, &path, Datatype::Float64).unwrap();
        let back = read_volume(&path).unwrap();

        prop_assert_eq!(back.channels(), v.channels());
        prop_assert_eq!(back.data(), v.data());
        let m = v.grid().affine().matrix();
        let r = back.grid().affine().matrix();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                prop_assert!((m[(i, j)] - r[(i, j)]).abs() <= 1e-6 * (1.0 + m[(i, j)].abs()));
            }
        }
    }

    #[test]
    fn label_files_round_trip_exactly(labels in prop::collection::vec(0usize..6, 16)) {
        let grid = GridSpec::isotropic(vec![4, 4]).unwrap();
        let v = Volume::labels(grid, labels.iter().map(|&x| x as f64).collect()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.nii");
        write_volume(&v, &path, Datatype::Uint8).unwrap();
        let back = read_volume(&path).unwrap();
        prop_assert_eq!(back.data(), v.data());
    }
}
