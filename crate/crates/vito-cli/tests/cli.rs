//! End-to-end tests of the `vito` binary: each test shells out to the real
//! executable and checks files, exit codes, and the error contract.

use std::path::Path;
use std::process::{Command, Output};

use vito::io::{read_medium_grid, read_volume, write_emissive_grid, VolumeFile};
use vito::math::{vec3, Aabb};
use vito::volume::EmissiveGrid;

fn vito(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vito"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = vito(args, dir);
    assert!(
        out.status.success(),
        "vito {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Asserts the run failed with the given exit code and a single-line
/// `error: ` message on stderr, and returns that line.
fn fails(args: &[&str], dir: &Path, code: i32) -> String {
    let out = vito(args, dir);
    assert_eq!(out.status.code(), Some(code), "vito {args:?}");
    let stderr = String::from_utf8_lossy(&out.stderr).into_owned();
    let lines: Vec<&str> = stderr.lines().collect();
    assert_eq!(lines.len(), 1, "expected one stderr line, got:\n{stderr}");
    assert!(lines[0].starts_with("error: "), "stderr: {stderr}");
    lines[0].to_string()
}

#[test]
fn pipeline_phantom_render_reconstruct_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    ok(
        &[
            "phantom-gen",
            "--kind",
            "nested-spheres",
            "--dims",
            "8",
            "--out",
            "truth.vito",
        ],
        dir,
    );
    assert!(dir.join("truth.vito").is_file());

    let render = [
        "render",
        "--volume",
        "truth.vito",
        "--views",
        "3",
        "--width",
        "16",
        "--height",
        "16",
        "--focal",
        "20",
        "--spp",
        "8",
        "--out",
        "refs",
    ];
    ok(&render, dir);
    for i in 0..3 {
        assert!(dir.join(format!("refs/view_{i:03}.pfm")).is_file());
    }

    std::fs::write(
        dir.join("run.toml"),
        "[run]\ncondition = \"MO\"\niterations = 2\nspp = 4\nschedule = [[0, 1e-3]]\n\
         [grid]\ndims = [8, 8, 8]\n\
         [views]\ncount = 3\nwidth = 16\nheight = 16\nfocal = 20.0\n",
    )
    .unwrap();
    let stdout = ok(
        &[
            "reconstruct",
            "--config",
            "run.toml",
            "--refs",
            "refs",
            "--out",
            "recon.vito",
            "--log",
            "loss.csv",
        ],
        dir,
    );
    assert!(stdout.contains("iter   0"));
    assert!(stdout.contains("iter   1"));
    assert!(stdout.contains("light "));
    let csv = std::fs::read_to_string(dir.join("loss.csv")).unwrap();
    assert!(csv.starts_with("iteration,lr,loss,psnr,seconds\n"));
    assert_eq!(csv.lines().count(), 3);
    let recon = read_medium_grid(dir.join("recon.vito")).unwrap();
    assert_eq!(recon.dims(), [8, 8, 8]);

    // Re-render the reconstruction and compare against the references.
    let mut rerender = render;
    rerender[2] = "recon.vito";
    rerender[14] = "rendered";
    ok(&rerender, dir);
    let csv = ok(
        &["metrics", "--rendered", "rendered", "--reference", "refs"],
        dir,
    );
    assert!(csv.starts_with("view,mse,psnr,ssim\n"));
    assert!(csv.contains("\nview_001,"));
    assert!(csv.contains("\nmean,"));
    assert!(csv.contains("\npooled,"));

    // Self-comparison is exact: zero error, infinite PSNR, unit SSIM.
    let csv = ok(&["metrics", "--rendered", "refs", "--reference", "refs"], dir);
    for line in csv.lines().skip(1) {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(&fields[1..], &["0", "inf", "1"], "line {line}");
    }
}

#[test]
fn renders_are_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &[
            "phantom-gen",
            "--kind",
            "checker-slab",
            "--dims",
            "6",
            "--out",
            "t.vito",
        ],
        dir,
    );
    for (threads, out) in [("1", "a"), ("4", "b")] {
        ok(
            &[
                "--threads",
                threads,
                "render",
                "--volume",
                "t.vito",
                "--views",
                "2",
                "--width",
                "12",
                "--height",
                "12",
                "--focal",
                "15",
                "--spp",
                "16",
                "--out",
                out,
            ],
            dir,
        );
    }
    for i in 0..2 {
        let a = std::fs::read(dir.join(format!("a/view_{i:03}.pfm"))).unwrap();
        let b = std::fs::read(dir.join(format!("b/view_{i:03}.pfm"))).unwrap();
        assert_eq!(a, b, "view {i} differs between thread counts");
    }
}

#[test]
fn relight_slice_and_immerse_write_images() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(
        &[
            "phantom-gen",
            "--kind",
            "nested-spheres",
            "--dims",
            "8",
            "--out",
            "t.vito",
        ],
        dir,
    );
    let common = [
        "--volume",
        "t.vito",
        "--width",
        "12",
        "--height",
        "12",
        "--focal",
        "15",
        "--spp",
        "4",
    ];
    for mode in ["brightfield", "darkfield", "inverse-darkfield"] {
        let out = format!("{mode}.pfm");
        let mut args = vec!["relight", "--mode", mode, "--out", &out];
        args.extend_from_slice(&common);
        ok(&args, dir);
        assert!(dir.join(&out).is_file());
    }
    let mut args = vec!["slice", "--plane", "0,0,1,0", "--out", "slice.png"];
    args.extend_from_slice(&common);
    ok(&args, dir);
    assert!(dir.join("slice.png").is_file());

    let table = "only 0.001 0.001 0.001 0.02 0.02 0.02 0.5\n";
    std::fs::write(dir.join("water.txt"), table).unwrap();
    let mut args = vec![
        "immerse",
        "--water",
        "only",
        "--water-table",
        "water.txt",
        "--out",
        "wet.pfm",
    ];
    args.extend_from_slice(&common);
    ok(&args, dir);
    assert!(dir.join("wet.pfm").is_file());
}

#[test]
fn init_from_emissive_converts_to_a_medium() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let bounds = Aabb::new(vec3(-10.0, -10.0, -10.0), vec3(10.0, 10.0, 10.0));
    let n = 6 * 6 * 6;
    // Channel-major color planes: all of R, then G, then B.
    let color: Vec<f64> = [vec![0.3; n], vec![0.2; n], vec![0.1; n]].concat();
    let em = EmissiveGrid::from_fields([6, 6, 6], bounds, vec![0.25; n], color).unwrap();
    write_emissive_grid(dir.join("em.vito"), &em).unwrap();

    let stdout = ok(
        &[
            "init-from-emissive",
            "--emissive",
            "em.vito",
            "--light",
            "1,1,1",
            "--out",
            "medium.vito",
        ],
        dir,
    );
    assert!(stdout.contains("light 1.000000 1.000000 1.000000"));
    assert!(stdout.contains("boundary "));
    match read_volume(dir.join("medium.vito")).unwrap() {
        VolumeFile::Medium(m) => assert_eq!(m.dims(), [6, 6, 6]),
        VolumeFile::Emissive(_) => panic!("expected a medium volume"),
    }
}

#[test]
fn failures_exit_nonzero_with_one_error_line() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();

    let line = fails(&["render", "--volume", "absent.vito", "--out", "x"], dir, 1);
    assert!(line.contains("absent.vito"), "{line}");

    fails(
        &["phantom-gen", "--kind", "bogus", "--out", "x.vito"],
        dir,
        1,
    );

    std::fs::create_dir(dir.join("refs")).unwrap();
    let line = fails(
        &[
            "reconstruct",
            "--refs",
            "refs",
            "--out",
            "x.vito",
            "--condition",
            "LO",
        ],
        dir,
        1,
    );
    assert!(line.contains("condition"), "{line}");

    // Unknown flags and missing required arguments are usage errors.
    fails(&["render", "--volume"], dir, 2);
    fails(&["phantom-gen", "--out", "x.vito", "--nonsense"], dir, 2);

    // A truncated volume is rejected by the reader, not a crash.
    std::fs::write(dir.join("bad.vito"), b"VITO1garbage").unwrap();
    let line = fails(&["render", "--volume", "bad.vito", "--out", "x"], dir, 1);
    assert!(line.contains("bad.vito"), "{line}");
}
