//! End-to-end tests driving the `resplat` binary.
//!
//! Fixtures are written with the library so every file-level expectation
//! can be checked bitwise against the equivalent library call.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use resplat::geometry::mean_space;
use resplat::gridops::push;
use resplat::io::{probe, read_volume, write_volume, Datatype};
use resplat::{AffineMap, GridSpec, SpaceDescriptor, Volume, VolumeKind};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_resplat"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn exit(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn volume(dims: &[usize], affine: AffineMap, data: Vec<f64>) -> Volume {
    let grid = GridSpec::new(dims.to_vec(), affine).unwrap();
    Volume::new(grid, 1, data, VolumeKind::Continuous).unwrap()
}

/// The running 1D example: four voxels of size 2.5 holding 10..13.
fn toy_volume() -> Volume {
    volume(
        &[4],
        AffineMap::scaling(&[2.5]).unwrap(),
        vec![10.0, 11.0, 12.0, 13.0],
    )
}

fn toy_space() -> GridSpec {
    GridSpec::isotropic(vec![8]).unwrap()
}

fn write_space(grid: &GridSpec, path: &Path) {
    fs::write(path, SpaceDescriptor::from_grid(grid).to_json()).unwrap();
}

fn dir() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn file(dir: &tempfile::TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

// ---------------------------------------------------------------- mean-space

#[test]
fn mean_space_of_identity_cube_reproduces_it() {
    let d = dir();
    let input = file(&d, "cube.nii");
    let out = file(&d, "space.json");
    let cube = volume(&[4, 4, 4], AffineMap::identity(3), vec![0.0; 64]);
    write_volume(&cube, &input, Datatype::Float32).unwrap();

    let res = run(&["mean-space", path_str(&input), "--out", path_str(&out)]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    let text = stdout(&res);
    assert!(text.contains("dims: 4 4 4"), "stdout: {text}");
    assert!(text.contains("karcher iterations:"), "stdout: {text}");

    let desc = SpaceDescriptor::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(desc.dims, vec![4, 4, 4]);
    let space = desc.to_grid().unwrap();
    let m = space.affine().matrix().clone();
    for i in 0..3 {
        for j in 0..4 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!(
                (m[(i, j)] - want).abs() < 1e-10,
                "entry ({i},{j}) = {}",
                m[(i, j)]
            );
        }
    }
}

#[test]
fn mean_space_of_degenerate_line_rounds_to_eight() {
    let d = dir();
    let input = file(&d, "line.nii");
    let out = file(&d, "space.json");
    let line = volume(
        &[4, 1, 1],
        AffineMap::scaling(&[2.5, 1.0, 1.0]).unwrap(),
        vec![0.0; 4],
    );
    write_volume(&line, &input, Datatype::Float32).unwrap();

    let res = run(&["mean-space", path_str(&input), "--out", path_str(&out)]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    assert!(
        stdout(&res).contains("dims: 8 1 1"),
        "stdout: {}",
        stdout(&res)
    );

    let desc = SpaceDescriptor::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(desc.dims, vec![8, 1, 1]);
}

#[test]
fn mean_space_matches_the_library_bitwise() {
    let d = dir();
    let out = file(&d, "space.json");
    let mut paths = Vec::new();
    for (k, theta) in [0.3f64, -0.2].into_iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let linear =
            nalgebra::DMatrix::from_row_slice(3, 3, &[c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0]) * 1.1;
        let affine =
            AffineMap::from_parts(&linear, &nalgebra::DVector::from_vec(vec![2.0, -1.0, 0.5]))
                .unwrap();
        let v = volume(&[5, 4, 3], affine, vec![0.0; 60]);
        let p = file(&d, &format!("vol{k}.nii"));
        write_volume(&v, &p, Datatype::Float32).unwrap();
        paths.push(p);
    }

    let res = run(&[
        "mean-space",
        path_str(&paths[0]),
        path_str(&paths[1]),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));

    // The reference result uses the affines as they come back off disk, so
    // CLI and library see identical (float32-rounded) inputs.
    let grids: Vec<GridSpec> = paths
        .iter()
        .map(|p| {
            let f = probe(p).unwrap();
            GridSpec::new(f.dims, f.affine).unwrap()
        })
        .collect();
    let reference = mean_space(&grids, None).unwrap();

    let desc = SpaceDescriptor::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(desc.dims, reference.space.dims());
    let m = reference.space.affine().matrix();
    for (i, row) in desc.affine.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            assert_eq!(
                x.to_bits(),
                m[(i, j)].to_bits(),
                "affine entry ({i},{j}): {x} vs {}",
                m[(i, j)]
            );
        }
    }
}

#[test]
fn mean_space_honours_the_voxel_size_flag() {
    let d = dir();
    let input = file(&d, "cube.nii");
    let out = file(&d, "space.json");
    let cube = volume(&[4, 4, 4], AffineMap::identity(3), vec![0.0; 64]);
    write_volume(&cube, &input, Datatype::Float32).unwrap();

    let res = run(&[
        "mean-space",
        path_str(&input),
        "--voxel-size",
        "2",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    assert!(
        stdout(&res).contains("dims: 2 2 2"),
        "stdout: {}",
        stdout(&res)
    );
    assert!(
        stdout(&res).contains("voxel size: 2 2 2"),
        "stdout: {}",
        stdout(&res)
    );

    let bad = run(&[
        "mean-space",
        path_str(&input),
        "--voxel-size",
        "2,2",
        "--out",
        path_str(&out),
    ]);
    assert_eq!(exit(&bad), 2, "two sizes for three axes");
}

#[test]
fn mean_space_missing_input_exits_4() {
    let d = dir();
    let res = run(&[
        "mean-space",
        path_str(&file(&d, "absent.nii")),
        "--out",
        path_str(&file(&d, "space.json")),
    ]);
    assert_eq!(exit(&res), 4);
    assert!(stderr(&res).contains("error:"));
}

// ---------------------------------------------------------------------- push

#[test]
fn push_matches_the_toy_golden_values() {
    let d = dir();
    let input = file(&d, "toy.nii");
    let space = file(&d, "space.json");
    let out = file(&d, "out.nii");
    let count = file(&d, "count.nii");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();
    write_space(&toy_space(), &space);

    let res = run(&[
        "push",
        "-i",
        path_str(&input),
        "--space",
        path_str(&space),
        "-o",
        path_str(&out),
        "--count",
        path_str(&count),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));

    let pushed = read_volume(&out).unwrap();
    let counted = read_volume(&count).unwrap();
    assert_eq!(pushed.data(), &[10.0, 0.0, 5.5, 5.5, 0.0, 12.0, 0.0, 6.5]);
    assert_eq!(counted.data(), &[1.0, 0.0, 0.5, 0.5, 0.0, 1.0, 0.0, 0.5]);

    // No CLI-only numerics: the files hold exactly what the library returns.
    let reference = push(&toy_volume(), &toy_space()).unwrap();
    assert_eq!(pushed.data(), reference.pushed.data());
    assert_eq!(counted.data(), reference.count.data());
}

#[test]
fn push_onto_the_volumes_own_grid_copies_it() {
    let d = dir();
    let input = file(&d, "native.nii");
    let space = file(&d, "space.json");
    let out = file(&d, "out.nii");
    let count = file(&d, "count.nii");
    let grid = GridSpec::isotropic(vec![3, 4]).unwrap();
    let data: Vec<f64> = (0..12).map(|i| i as f64 * 1.5 - 4.0).collect();
    let v = Volume::new(grid.clone(), 1, data.clone(), VolumeKind::Continuous).unwrap();
    write_volume(&v, &input, Datatype::Float64).unwrap();
    write_space(&grid, &space);

    let res = run(&[
        "push",
        "-i",
        path_str(&input),
        "--space",
        path_str(&space),
        "-o",
        path_str(&out),
        "--count",
        path_str(&count),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    assert_eq!(read_volume(&out).unwrap().data(), &data[..]);
    assert_eq!(read_volume(&count).unwrap().data(), &vec![1.0; 12][..]);
}

#[test]
fn push_conserves_sums_when_the_input_lands_inside() {
    let d = dir();
    let input = file(&d, "small.nii");
    let space = file(&d, "space.json");
    let out = file(&d, "out.nii");
    let count = file(&d, "count.nii");

    let linear = nalgebra::DMatrix::identity(3, 3);
    let shift = nalgebra::DVector::from_vec(vec![3.0, 3.0, 3.0]);
    let affine = AffineMap::from_parts(&linear, &shift).unwrap();
    let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
    let v = volume(&[4, 4, 4], affine, data.clone());
    write_volume(&v, &input, Datatype::Float64).unwrap();
    write_space(&GridSpec::isotropic(vec![12, 12, 12]).unwrap(), &space);

    let res = run(&[
        "push",
        "-i",
        path_str(&input),
        "--space",
        path_str(&space),
        "-o",
        path_str(&out),
        "--count",
        path_str(&count),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));

    let total_in: f64 = data.iter().sum();
    let total_out: f64 = read_volume(&out).unwrap().data().iter().sum();
    assert!(
        (total_in - total_out).abs() <= 1e-12 * total_in.abs(),
        "{total_in} vs {total_out}"
    );
}

#[test]
fn push_with_mismatched_dimensions_exits_2() {
    let d = dir();
    let input = file(&d, "toy.nii");
    let space = file(&d, "space.json");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();
    write_space(&GridSpec::isotropic(vec![8, 8, 8]).unwrap(), &space);

    let res = run(&[
        "push",
        "-i",
        path_str(&input),
        "--space",
        path_str(&space),
        "-o",
        path_str(&file(&d, "out.nii")),
        "--count",
        path_str(&file(&d, "count.nii")),
    ]);
    assert_eq!(exit(&res), 2, "stderr: {}", stderr(&res));
}

#[test]
fn push_results_are_bitwise_stable_across_runs_and_threads() {
    let d = dir();
    let input = file(&d, "noise.nii");
    let space = file(&d, "space.json");
    let data: Vec<f64> = (0..9 * 8 * 7)
        .map(|i| ((i * 2654435761usize) % 1000) as f64 - 500.0)
        .collect();
    let v = volume(
        &[9, 8, 7],
        AffineMap::scaling(&[0.8, 1.1, 0.9]).unwrap(),
        data,
    );
    write_volume(&v, &input, Datatype::Float64).unwrap();
    write_space(&GridSpec::isotropic(vec![10, 10, 10]).unwrap(), &space);

    let mut payloads = Vec::new();
    for (run_idx, threads) in ["1", "4", "4"].iter().enumerate() {
        let out = file(&d, &format!("out{run_idx}.nii"));
        let count = file(&d, &format!("count{run_idx}.nii"));
        let res = run(&[
            "--threads",
            threads,
            "push",
            "-i",
            path_str(&input),
            "--space",
            path_str(&space),
            "-o",
            path_str(&out),
            "--count",
            path_str(&count),
        ]);
        assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
        payloads.push((fs::read(&out).unwrap(), fs::read(&count).unwrap()));
    }
    assert_eq!(payloads[0], payloads[1], "1 thread vs 4 threads");
    assert_eq!(payloads[1], payloads[2], "repeated run");
}

// ---------------------------------------------------------------------- pull

#[test]
fn pull_matches_the_toy_golden_values() {
    let d = dir();
    let input = file(&d, "toy.nii");
    let like = file(&d, "target.nii");
    let out = file(&d, "out.nii");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();
    let target = Volume::zeros(toy_space(), 1);
    write_volume(&target, &like, Datatype::Float32).unwrap();

    let res = run(&[
        "pull",
        "-i",
        path_str(&input),
        "--like",
        path_str(&like),
        "-o",
        path_str(&out),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    assert_eq!(
        read_volume(&out).unwrap().data(),
        &[10.0, 10.4, 10.8, 11.2, 11.6, 12.0, 12.4, 12.8]
    );
}

#[test]
fn pull_like_the_input_itself_is_a_bitwise_copy() {
    let d = dir();
    let input = file(&d, "toy.nii");
    let out = file(&d, "out.nii");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();

    let res = run(&[
        "pull",
        "-i",
        path_str(&input),
        "--like",
        path_str(&input),
        "-o",
        path_str(&out),
    ]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    let bits = |v: &Volume| -> Vec<u64> { v.data().iter().map(|x| x.to_bits()).collect() };
    assert_eq!(bits(&read_volume(&out).unwrap()), bits(&toy_volume()));
}

#[test]
fn pull_after_push_smooths_rather_than_inverts() {
    let d = dir();
    let input = file(&d, "toy.nii");
    let space = file(&d, "space.json");
    let pushed = file(&d, "pushed.nii");
    let count = file(&d, "count.nii");
    let back = file(&d, "back.nii");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();
    write_space(&toy_space(), &space);

    let res = run(&[
        "push",
        "-i",
        path_str(&input),
        "--space",
        path_str(&space),
        "-o",
        path_str(&pushed),
        "--count",
        path_str(&count),
    ]);
    assert_eq!(exit(&res), 0);
    let res = run(&[
        "pull",
        "-i",
        path_str(&pushed),
        "--like",
        path_str(&input),
        "-o",
        path_str(&back),
    ]);
    assert_eq!(exit(&res), 0);

    // The round trip is a smoothing, not an inverse: report its size and
    // require only that it is a genuine, finite deviation.
    let original = toy_volume();
    let returned = read_volume(&back).unwrap();
    let deviation: f64 = original
        .data()
        .iter()
        .zip(returned.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    println!("pull-after-push deviation norm: {deviation:e}");
    assert!(deviation.is_finite());
    assert!(deviation > 0.0);
}

// -------------------------------------------------------------- adjoint-test

#[test]
fn adjoint_test_passes_on_random_grid_pairs() {
    let res = run(&[
        "adjoint-test",
        "--dims-src",
        "4,5",
        "--dims-dst",
        "6,3",
        "--seed",
        "42",
        "--trials",
        "50",
    ]);
    assert_eq!(exit(&res), 0, "stdout: {}", stdout(&res));
    let text = stdout(&res);
    assert!(text.contains("identity-grid error: 0e0"), "stdout: {text}");
    assert!(text.contains("max relative error:"), "stdout: {text}");
}

#[test]
fn adjoint_test_detects_a_mismatched_affine() {
    let res = run(&[
        "adjoint-test",
        "--dims-src",
        "4,5",
        "--dims-dst",
        "6,3",
        "--seed",
        "42",
        "--trials",
        "5",
        "--corrupt",
    ]);
    assert_eq!(exit(&res), 1, "stdout: {}", stdout(&res));
}

#[test]
fn adjoint_test_rejects_oversized_dimensions() {
    let res = run(&["adjoint-test", "--dims-src", "40", "--dims-dst", "8"]);
    assert_eq!(exit(&res), 2);
    let res = run(&["adjoint-test", "--dims-src", "4,4", "--dims-dst", "8"]);
    assert_eq!(exit(&res), 2);
}

// ---------------------------------------------------------------------- dice

fn write_labels(d: &tempfile::TempDir, name: &str, grid: &GridSpec, data: Vec<f64>) -> PathBuf {
    let p = file(d, name);
    let v = Volume::labels(grid.clone(), data).unwrap();
    write_volume(&v, &p, Datatype::Uint8).unwrap();
    p
}

#[test]
fn dice_prints_the_two_thirds_overlap_case() {
    let d = dir();
    let grid = GridSpec::isotropic(vec![4]).unwrap();
    let a = write_labels(&d, "a.nii", &grid, vec![1.0, 1.0, 0.0, 0.0]);
    let b = write_labels(&d, "b.nii", &grid, vec![1.0, 0.0, 0.0, 0.0]);

    let res = run(&["dice", path_str(&a), path_str(&b)]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    let text = stdout(&res);
    assert!(text.contains("class 1: 0.667"), "stdout: {text}");
    assert!(text.contains("median: 0.667"), "stdout: {text}");
}

#[test]
fn dice_reports_identical_and_disjoint_masks() {
    let d = dir();
    let grid = GridSpec::isotropic(vec![6]).unwrap();
    let same = write_labels(&d, "same.nii", &grid, vec![0.0, 1.0, 1.0, 2.0, 2.0, 0.0]);
    let res = run(&["dice", path_str(&same), path_str(&same), "--classes", "3"]);
    assert_eq!(exit(&res), 0);
    let text = stdout(&res);
    assert!(text.contains("class 1: 1.000"), "stdout: {text}");
    assert!(text.contains("class 2: 1.000"), "stdout: {text}");
    assert!(text.contains("median: 1.000"), "stdout: {text}");

    let left = write_labels(&d, "left.nii", &grid, vec![1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    let right = write_labels(&d, "right.nii", &grid, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    let res = run(&["dice", path_str(&left), path_str(&right)]);
    assert_eq!(exit(&res), 0);
    let text = stdout(&res);
    assert!(text.contains("class 1: 0.000"), "stdout: {text}");
    assert!(text.contains("median: 0.000"), "stdout: {text}");
}

#[test]
fn dice_on_different_grids_exits_2() {
    let d = dir();
    let a = write_labels(
        &d,
        "a.nii",
        &GridSpec::isotropic(vec![4]).unwrap(),
        vec![1.0; 4],
    );
    let b = write_labels(
        &d,
        "b.nii",
        &GridSpec::new(vec![4], AffineMap::scaling(&[2.0]).unwrap()).unwrap(),
        vec![1.0; 4],
    );
    let res = run(&["dice", path_str(&a), path_str(&b)]);
    assert_eq!(exit(&res), 2, "stderr: {}", stderr(&res));
}

// ---------------------------------------------------------------------- info

#[test]
fn info_echoes_the_header_fields() {
    let d = dir();
    let input = file(&d, "line.nii");
    let line = volume(
        &[4, 1, 1],
        AffineMap::scaling(&[2.5, 1.0, 1.0]).unwrap(),
        vec![10.0, 11.0, 12.0, 13.0],
    );
    write_volume(&line, &input, Datatype::Float32).unwrap();

    let res = run(&["info", path_str(&input)]);
    assert_eq!(exit(&res), 0, "stderr: {}", stderr(&res));
    let text = stdout(&res);
    assert!(text.contains("dims: 4 1 1"), "stdout: {text}");
    assert!(text.contains("datatype: float32"), "stdout: {text}");
    assert!(text.contains("pixdim: 2.5 1 1"), "stdout: {text}");
    assert!(text.contains("2.5 0 0 0"), "stdout: {text}");
    assert!(text.contains("fov corners"), "stdout: {text}");
}

/// A downstream reader that quits early (`resplat info … | head`) must end
/// the process silently via SIGPIPE, not as a write panic. The read end of
/// the pipe is closed before the child spawns, so its first print hits a
/// broken pipe deterministically.
#[cfg(unix)]
#[test]
fn info_into_a_closed_pipe_dies_quietly() {
    use std::os::unix::io::FromRawFd;
    use std::os::unix::process::ExitStatusExt;

    let d = dir();
    let input = file(&d, "toy.nii");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();

    let mut fds = [0i32; 2];
    assert_eq!(unsafe { libc::pipe(fds.as_mut_ptr()) }, 0);
    unsafe { libc::close(fds[0]) };
    let closed_stdout = unsafe { std::process::Stdio::from_raw_fd(fds[1]) };

    let out = Command::new(env!("CARGO_BIN_EXE_resplat"))
        .args(["info", path_str(&input)])
        .stdout(closed_stdout)
        .output()
        .expect("binary runs");
    assert_eq!(out.status.signal(), Some(libc::SIGPIPE));
    assert!(stderr(&out).is_empty(), "stderr: {}", stderr(&out));
}

#[test]
fn info_on_a_corrupt_magic_exits_4() {
    let d = dir();
    let input = file(&d, "bad.nii");
    write_volume(&toy_volume(), &input, Datatype::Float64).unwrap();
    let mut bytes = fs::read(&input).unwrap();
    bytes[344] = b'X';
    fs::write(&input, &bytes).unwrap();

    let res = run(&["info", path_str(&input)]);
    assert_eq!(exit(&res), 4, "stderr: {}", stderr(&res));
    assert!(stderr(&res).contains("error:"), "stderr: {}", stderr(&res));
}

// ------------------------------------------------------------- round trip

#[test]
fn written_then_inspected_volume_matches_its_parameters() {
    let d = dir();
    let input = file(&d, "vol.nii");
    let v = volume(
        &[3, 5],
        AffineMap::scaling(&[1.25, 0.5]).unwrap(),
        (0..15).map(f64::from).collect(),
    );
    write_volume(&v, &input, Datatype::Int16).unwrap();

    let res = run(&["info", path_str(&input)]);
    assert_eq!(exit(&res), 0);
    let text = stdout(&res);
    assert!(text.contains("dims: 3 5"), "stdout: {text}");
    assert!(text.contains("datatype: int16"), "stdout: {text}");
    assert!(text.contains("pixdim: 1.25 0.5"), "stdout: {text}");
}
