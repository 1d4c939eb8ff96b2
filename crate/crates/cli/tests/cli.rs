use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use fourier_sr::losses::{feature_loss, fourier_loss_terms, l1_loss, ConvFeatureExtractor};
use fourier_sr::nets::{Checkpoint, NetworkKind};
use fourier_sr::tensor::{bicubic_resample, encode_ppm, load_ppm, save_ppm};
use fourier_sr::trainer::synthetic_image;
use fourier_sr::Image;
use tempfile::TempDir;

fn fsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fsr"))
        .args(args)
        .output()
        .expect("spawn fsr")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_image(dir: &Path, name: &str, img: &Image) -> std::path::PathBuf {
    let path = dir.join(name);
    save_ppm(img, &path).unwrap();
    path
}

/// Reads `name=value` lines back into pairs.
fn parse_report(text: &str) -> Vec<(String, f64)> {
    text.lines()
        .map(|l| {
            let (k, v) = l.split_once('=').unwrap();
            (k.to_string(), v.parse().unwrap())
        })
        .collect()
}

#[test]
fn help_for_every_subcommand() {
    for sub in ["degrade", "loss", "spectrum", "train", "eval", "gradcheck", "upscale"] {
        let o = fsr(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage: fsr"), "{sub}");
    }
    let o = fsr(&["gradcheck", "--help"]);
    assert!(stdout(&o).contains("[default: 8]"));
    assert!(!stdout(&o).contains("corrupt"));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(fsr(&["degrade", "--bogus"]).status.code(), Some(1));
    assert_eq!(fsr(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(fsr(&[]).status.code(), Some(1));
}

#[test]
fn degrade_matches_library() {
    let dir = TempDir::new().unwrap();
    let hr = synthetic_image(64, 64, 3, 1);
    let input = write_image(dir.path(), "hr.ppm", &hr);
    let out = dir.path().join("lr.ppm");
    let o = fsr(&["degrade", "--in", p(&input), "--out", p(&out), "--scale", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let lr = load_ppm(&out).unwrap();
    assert_eq!(lr.shape(), (16, 16, 3));
    let expected = bicubic_resample(&load_ppm(&input).unwrap(), 16, 16).unwrap();
    assert_eq!(fs::read(&out).unwrap(), encode_ppm(&expected).unwrap());
}

#[test]
fn degrade_constant_and_bad_dims() {
    let dir = TempDir::new().unwrap();
    let input = write_image(dir.path(), "c.ppm", &Image::filled(8, 8, 3, 100.0 / 255.0));
    let out = dir.path().join("o.ppm");
    assert!(fsr(&["degrade", "--in", p(&input), "--out", p(&out), "--scale", "2"]).status.success());
    assert!(load_ppm(&out).unwrap().data().iter().all(|&v| v == 100.0 / 255.0));

    let odd = write_image(dir.path(), "odd.ppm", &Image::zeros(10, 8, 3));
    let o = fsr(&["degrade", "--in", p(&odd), "--out", p(&out), "--scale", "4"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("odd.ppm"));
}

#[test]
fn loss_identical_is_zero() {
    let dir = TempDir::new().unwrap();
    let a = write_image(dir.path(), "a.ppm", &synthetic_image(16, 16, 3, 2));
    let o = fsr(&["loss", "--pred", p(&a), "--target", p(&a)]);
    assert!(o.status.success());
    let report = parse_report(&stdout(&o));
    let names: Vec<_> = report.iter().map(|(k, _)| k.as_str()).collect();
    assert_eq!(names, ["l1", "fourier_amp", "fourier_phase", "fourier", "feature"]);
    assert!(report.iter().all(|(_, v)| *v == 0.0));
}

#[test]
fn loss_matches_library_and_json() {
    let dir = TempDir::new().unwrap();
    let a = write_image(dir.path(), "a.ppm", &synthetic_image(16, 16, 3, 3));
    let b = write_image(dir.path(), "b.ppm", &synthetic_image(16, 16, 3, 4));
    let json = dir.path().join("r.json");
    let o = fsr(&[
        "loss", "--pred", p(&a), "--target", p(&b), "--feature-seed", "7", "--json", p(&json),
    ]);
    assert!(o.status.success());
    let (pa, pb) = (load_ppm(&a).unwrap(), load_ppm(&b).unwrap());
    let f = fourier_loss_terms(&pa, &pb).unwrap();
    let mut ex = ConvFeatureExtractor::new(3, 7);
    let expected = [
        l1_loss(&pa, &pb).unwrap().value,
        f.amplitude.value,
        f.phase.value,
        f.combined.value,
        feature_loss(&pa, &pb, &mut ex).unwrap().value,
    ];
    let report = parse_report(&stdout(&o));
    for ((_, got), want) in report.iter().zip(expected) {
        assert_eq!(*got, want);
    }
    let parsed: serde_json::Value = serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(parsed["fourier"].as_f64().unwrap(), expected[3]);
}

#[test]
fn loss_dimension_mismatch_fails() {
    let dir = TempDir::new().unwrap();
    let a = write_image(dir.path(), "a.ppm", &Image::zeros(8, 8, 3));
    let b = write_image(dir.path(), "b.ppm", &Image::zeros(8, 6, 3));
    let o = fsr(&["loss", "--pred", p(&a), "--target", p(&b)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("shape mismatch"));
}

#[test]
fn spectrum_writes_half_plane() {
    let dir = TempDir::new().unwrap();
    let a = write_image(dir.path(), "a.ppm", &synthetic_image(16, 12, 3, 5));
    let out = dir.path().join("s.ppm");
    assert!(fsr(&["spectrum", "--in", p(&a), "--out", p(&out)]).status.success());
    let s = load_ppm(&out).unwrap();
    assert_eq!(s.shape(), (8, 12, 3));
    assert!(s.data().iter().any(|&v| v == 1.0));
}

#[test]
fn eval_identical_dirs() {
    let dir = TempDir::new().unwrap();
    for sub in ["pred", "ref"] {
        fs::create_dir(dir.path().join(sub)).unwrap();
        for i in 0..2 {
            write_image(&dir.path().join(sub), &format!("{i}.ppm"), &synthetic_image(16, 16, 3, i));
        }
    }
    let o = fsr(&[
        "eval",
        "--pred-dir",
        p(&dir.path().join("pred")),
        "--ref-dir",
        p(&dir.path().join("ref")),
        "--baseline",
        "bicubic",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let lines: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(lines[0], ["image", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"]);
    assert_eq!(lines.len(), 4);
    for row in &lines[1..] {
        assert_eq!(row[1], "inf");
        assert_eq!(row[2], "1.000000");
        assert!(row[3].parse::<f64>().unwrap().is_finite());
    }
    assert_eq!(lines[3][0], "mean");
}

fn train_dir(dir: &Path) -> std::path::PathBuf {
    let data = dir.join("data");
    fs::create_dir(&data).unwrap();
    write_image(&data, "a.ppm", &synthetic_image(32, 32, 3, 8));
    data
}

#[test]
fn train_smoke_log_lines() {
    let dir = TempDir::new().unwrap();
    let data = train_dir(dir.path());
    let cfg = dir.path().join("cfg.txt");
    fs::write(&cfg, "# tiny\ncrop_lr = 4\nbatch = 1\npretrain_iters = 0\ngen_channels = 4\ngen_blocks = 1\n").unwrap();
    let out = dir.path().join("run");
    let o = fsr(&[
        "train", "--config", p(&cfg), "--data-dir", p(&data), "--out", p(&out), "--preset", "1",
        "--iters", "100", "--lr", "1e-3",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("enable_l1=true"));
    assert!(stdout(&o).contains("iters=100"));
    let log = fs::read_to_string(out.join("train.tsv")).unwrap();
    assert_eq!(log.lines().count(), 101);
    assert!(log.starts_with("iter\t"));
    assert!(Checkpoint::load(out.join("checkpoint.fsrc")).is_ok());
}

#[test]
fn train_rejects_bad_override() {
    let dir = TempDir::new().unwrap();
    let data = train_dir(dir.path());
    let out = dir.path().join("run");
    let o = fsr(&["train", "--data-dir", p(&data), "--out", p(&out), "--set", "nonsense=1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = fsr(&["train", "--data-dir", p(&data), "--out", p(&out), "--preset", "9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn upscale_zero_checkpoint_is_black() {
    let dir = TempDir::new().unwrap();
    let data = train_dir(dir.path());
    let out = dir.path().join("run");
    let o = fsr(&[
        "train", "--data-dir", p(&data), "--out", p(&out), "--iters", "0", "--set", "pretrain_iters=0",
        "--set", "gen_channels=4", "--set", "gen_blocks=1", "--set", "crop_lr=4",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut ck = Checkpoint::load(out.join("checkpoint.fsrc")).unwrap();
    let g = ck
        .networks
        .iter_mut()
        .find(|n| n.kind == NetworkKind::Generator)
        .unwrap();
    for t in &mut g.tensors {
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let zero = dir.path().join("zero.fsrc");
    ck.save(&zero).unwrap();

    let lr = write_image(dir.path(), "lr.ppm", &synthetic_image(6, 5, 3, 9));
    let sr = dir.path().join("sr.ppm");
    let o = fsr(&["upscale", "--checkpoint", p(&zero), "--in", p(&lr), "--out", p(&sr)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let img = load_ppm(&sr).unwrap();
    assert_eq!(img.shape(), (24, 20, 3));
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn gradcheck_passes_and_is_deterministic() {
    let a = fsr(&["gradcheck", "--seed", "3"]);
    assert!(a.status.success(), "{}", stdout(&a));
    let b = fsr(&["gradcheck", "--seed", "3", "--threads", "2"]);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    for name in ["loss_fourier_phase", "gan_discriminator", "layer_pixel_shuffle", "net_fourier_discriminator_3"] {
        assert!(text.contains(name), "{name}");
    }
}

#[test]
fn gradcheck_negative_control_fails() {
    let o = fsr(&["gradcheck", "--corrupt", "loss_fourier"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL"));
    assert!(fsr(&["gradcheck", "--size", "7"]).status.code() == Some(2));
}
