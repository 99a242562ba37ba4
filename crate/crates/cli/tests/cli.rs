use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use crnet_core::image_io::{load_image, read_tensor, save_image};
use crnet_core::tensor::bicubic_resize;
use crnet_core::{Shape, Tensor4};

fn crnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_crnet"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = crnet(args);
    assert!(
        out.status.success(),
        "{args:?}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Smooth pattern with edges, exact on 8-bit levels.
fn pattern(c: usize, h: usize, w: usize, phase: f64) -> Tensor4 {
    Tensor4::from_fn(Shape::new(1, c, h, w), |_, ch, i, j| {
        let v = 0.5 + 0.3 * ((i as f64 * 0.4 + phase).sin() * (j as f64 * 0.3 + ch as f64).cos());
        if (i / 7 + j / 5) % 3 == 0 {
            v * 0.5
        } else {
            v
        }
    })
    .quantize_u8()
}

fn write_images(dir: &Path, specs: &[(usize, usize, usize)]) -> Vec<PathBuf> {
    specs
        .iter()
        .enumerate()
        .map(|(i, &(c, h, w))| {
            let path = dir.join(format!("img{i}.png"));
            save_image(&path, &pattern(c, h, w, i as f64)).unwrap();
            path
        })
        .collect()
}

#[test]
fn zero_residual_model_returns_interpolated_input_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("zero.ckpt");
    let cfg = dir.path().join("model.cfg");
    fs::write(&cfg, "model = crnet-a\nn0 = 4\nm0 = 4\nk = 2\n").unwrap();
    ok(&[
        "init",
        "--config",
        s(&cfg),
        "--zero-residual",
        "--out",
        s(&ck),
    ]);
    for (i, input) in write_images(dir.path(), &[(1, 20, 18), (3, 16, 22)])
        .iter()
        .enumerate()
    {
        let out = dir.path().join(format!("out{i}.png"));
        ok(&[
            "sr",
            "--checkpoint",
            s(&ck),
            "--input",
            s(input),
            "--output",
            s(&out),
            "--scale",
            "2",
            "--interpolated",
        ]);
        assert_eq!(fs::read(input).unwrap(), fs::read(&out).unwrap());

        // From a low-resolution input the result is the bicubic image.
        ok(&[
            "sr",
            "--checkpoint",
            s(&ck),
            "--input",
            s(input),
            "--output",
            s(&out),
            "--scale",
            "3",
        ]);
        let expected = bicubic_resize(&load_image(input).unwrap(), 3.0)
            .unwrap()
            .clamp(0.0, 1.0)
            .quantize_u8();
        assert_eq!(load_image(&out).unwrap(), expected);
    }
}

#[test]
fn eval_of_identical_images_is_flagged_infinite() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &[(1, 24, 24), (3, 30, 26)]);
    let csv = dir.path().join("m.csv");
    let table = ok(&[
        "eval",
        "--sr-dir",
        s(dir.path()),
        "--hr-dir",
        s(dir.path()),
        "--scale",
        "2",
        "--csv",
        s(&csv),
    ]);
    assert!(
        table
            .lines()
            .any(|l| l.starts_with("mean") && l.contains("inf") && l.contains("1.0000")),
        "{table}"
    );
    let csv = fs::read_to_string(&csv).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",inf,1")), "{csv}");
}

#[test]
fn baseline_reports_every_image() {
    let dir = tempfile::tempdir().unwrap();
    write_images(dir.path(), &[(3, 36, 40), (1, 33, 30)]);
    let table = ok(&["baseline", "--set", s(dir.path()), "--scale", "3"]);
    assert!(
        table.contains("img0.png") && table.contains("img1.png") && table.contains("8-bit"),
        "{table}"
    );
    let float = ok(&[
        "baseline",
        "--set",
        s(dir.path()),
        "--scale",
        "3",
        "--float",
        "--border",
        "replicate",
    ]);
    assert!(float.contains("float"));
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("m.ckpt");
    ok(&["init", "--model", "crnet-b", "--seed", "3", "--out", s(&ck)]);
    let mut bytes = fs::read(&ck).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    fs::write(&ck, bytes).unwrap();
    let img = &write_images(dir.path(), &[(3, 8, 8)])[0];
    let out = crnet(&[
        "sr",
        "--checkpoint",
        s(&ck),
        "--input",
        s(img),
        "--output",
        "x.png",
        "--scale",
        "2",
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn bad_arguments_print_usage_and_fail() {
    for args in [
        &["sr", "--scale", "2"][..],
        &["no-such-command"],
        &["eval", "--hr-dir", "x", "--scale", "2"],
    ] {
        let out = crnet(args);
        assert!(!out.status.success(), "{args:?}");
        assert!(
            String::from_utf8_lossy(&out.stderr).contains("Usage"),
            "{args:?}"
        );
    }
}

#[test]
fn degrade_writes_aligned_triples() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    write_images(&src, &[(1, 25, 31)]);
    let out = dir.path().join("out");
    ok(&[
        "degrade",
        "--input",
        s(&src),
        "--out",
        s(&out),
        "--scale",
        "3",
    ]);
    let dims = |sub: &str| load_image(&out.join(sub).join("img0.png")).unwrap().shape();
    assert_eq!(dims("hr"), Shape::new(1, 1, 24, 30));
    assert_eq!(dims("lr"), Shape::new(1, 1, 8, 10));
    assert_eq!(dims("ilr"), Shape::new(1, 1, 24, 30));
}

#[test]
fn csc_solve_is_deterministic_and_descends() {
    let dir = tempfile::tempdir().unwrap();
    let img = &write_images(dir.path(), &[(1, 12, 10)])[0];
    let run = |tag: &str| {
        let (trace, codes) = (
            dir.path().join(format!("{tag}.csv")),
            dir.path().join(format!("{tag}.t4d")),
        );
        ok(&[
            "csc-solve",
            "--image",
            s(img),
            "--random-filters",
            "4",
            "--lambda",
            "0.05",
            "--iters",
            "60",
            "--seed",
            "9",
            "--trace",
            s(&trace),
            "--codes",
            s(&codes),
        ]);
        (
            fs::read_to_string(trace).unwrap(),
            fs::read(&codes).unwrap(),
            codes,
        )
    };
    let (trace, codes, path) = run("a");
    let (trace2, codes2, _) = run("b");
    assert_eq!((&trace, &codes), (&trace2, &codes2));
    let objective: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(objective.len(), 60);
    assert!(objective.windows(2).all(|w| w[1] <= w[0] + 1e-12));
    assert_eq!(
        read_tensor(&path).unwrap().shape(),
        Shape::new(1, 4, 12, 10)
    );
}

#[test]
fn grad_check_passes() {
    let out = ok(&["grad-check"]);
    assert_eq!(
        out.lines().filter(|l| l.starts_with("PASS")).count(),
        6,
        "{out}"
    );
}

#[test]
fn training_is_reproducible_and_checkpoints_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_images(&data, &[(1, 32, 32), (1, 32, 32), (1, 32, 32)]);
    let cfg = dir.path().join("train.cfg");
    fs::write(
        &cfg,
        "model = crnet-a\nn0 = 4\nm0 = 4\nk = 2\n\
         optimizer = adam\nlr0 = 0.001\nlr_period = none\nclip = none\n\
         epochs = 2\nbatch_size = 4\npatch = 16\nscales = 2\nseed = 5\ncheckpoint_every = 1\n",
    )
    .unwrap();
    let train = |out: &Path| {
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--data",
            s(&data),
            "--out",
            s(out),
        ])
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    train(&a);
    train(&b);
    for f in [
        "loss.csv",
        "epoch_0001.ckpt",
        "epoch_0002.ckpt",
        "final.ckpt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let loss = fs::read_to_string(a.join("loss.csv")).unwrap();
    assert!(loss.starts_with("step,epoch,lr,loss\n"));
    // 3 images × 4 patches = 12 pairs in batches of 4, two epochs
    assert_eq!(loss.lines().count(), 1 + 6);

    let table = ok(&[
        "eval",
        "--checkpoint",
        s(&a.join("final.ckpt")),
        "--hr-dir",
        s(&data),
        "--scale",
        "2",
    ]);
    assert!(table.lines().any(|l| l.starts_with("mean")), "{table}");
    let ens = ok(&[
        "eval",
        "--checkpoint",
        s(&a.join("final.ckpt")),
        "--hr-dir",
        s(&data),
        "--scale",
        "2",
        "--ensemble",
    ]);
    assert!(ens.contains("img2.png"));

    fs::write(&cfg, "model = crnet-a\nbogus = 1\n").unwrap();
    let out = crnet(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&a),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn crnet_b_patches_are_measured_in_low_resolution_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_images(&data, &[(3, 32, 32)]);
    let cfg = dir.path().join("b.cfg");
    fs::write(
        &cfg,
        "model = crnet-b\nn0 = 4\nm0 = 4\nk = 1\nscales = 2,4\n\
         epochs = 1\nbatch_size = 1\npatch = 8\nlr_period = none\nseed = 1\n",
    )
    .unwrap();
    let out = crnet(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("r")),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // ×2: 16-pixel HR windows tile 32×32 four times; ×4: one 32-pixel window
    assert!(String::from_utf8_lossy(&out.stderr).contains("5 patch pairs"));
}
