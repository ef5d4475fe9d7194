use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use otwb::instances::{load_instance, Instance};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_otwb"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("otwb-cli-{}-{name}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("binary runs")
}

fn gen(dir: &Path, file: &str, args: &[&str]) -> PathBuf {
    let out = dir.join(file);
    let o = run(bin().arg("gen").args(args).arg("--out").arg(&out));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn report(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).expect("report on stdout")
}

#[test]
fn gen_is_deterministic() {
    let d = scratch("gen");
    let a = gen(&d, "a.json", &["--kind", "random", "--n", "100", "--seed", "7"]);
    let b = gen(&d, "b.json", &["--kind", "random", "--n", "100", "--seed", "7"]);
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn gen_kinds_have_expected_sizes() {
    let d = scratch("kinds");
    let g = gen(&d, "g.json", &["--kind", "gaussian", "--n", "2"]);
    let Instance::Ot(g) = load_instance(&g).unwrap() else { panic!("expected OT") };
    assert_eq!(g.n(), 2);
    let c = gen(&d, "c.json", &["--kind", "corner", "--npix", "10"]);
    let Instance::Ot(c) = load_instance(&c).unwrap() else { panic!("expected OT") };
    assert_eq!(c.n(), 100);
    let p = gen(&d, "p.json", &["--kind", "image-pair", "--npix", "4", "--seed", "3"]);
    assert_eq!(load_instance(&p).unwrap().clone_n(), 16);
    let w = gen(&d, "w.json", &["--kind", "gaussian-wb", "--n", "12", "--m", "3"]);
    let Instance::Wb(w) = load_instance(&w).unwrap() else { panic!("expected WB") };
    assert_eq!((w.n(), w.m()), (12, 3));
}

trait Size {
    fn clone_n(&self) -> usize;
}

impl Size for Instance {
    fn clone_n(&self) -> usize {
        match self {
            Instance::Ot(o) => o.n(),
            Instance::Wb(w) => w.n(),
        }
    }
}

#[test]
fn gen_reports_io_errors_with_path() {
    let o = run(bin().args(["gen", "--kind", "random", "--n", "3", "--out", "/nonexistent-dir/x.json"]));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("/nonexistent-dir/x.json"));
}

#[test]
fn usage_errors() {
    let d = scratch("usage");
    let f = gen(&d, "r.json", &["--kind", "random", "--n", "5"]);
    let o = run(bin().arg("solve").arg(&f).args(["--eps", "-1"]));
    assert_eq!(o.status.code(), Some(64));
    let o = run(bin().arg("solve").arg(&f).args(["--method", "sinkhorn"]));
    assert_eq!(o.status.code(), Some(64));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown method"));
    let o = run(bin().arg("solve").arg(&f).args(["--penalty", "l2:1"]));
    assert_eq!(o.status.code(), Some(64));
    let o = run(bin().arg("solve").arg(&f).env("OTWB_THREADS", "many"));
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn random_100_is_certified() {
    let d = scratch("solve");
    let f = gen(&d, "r.json", &["--kind", "random", "--n", "100", "--seed", "1"]);
    let o = run(bin().arg("solve").arg(&f).args(["--method", "gamma-hpd-ls-fm", "--eps", "0.01"]));
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let r = report(&o);
    assert!(r["gap_rounded"].as_f64().unwrap() <= 0.01);
    assert_eq!(r["certified"], true);
    assert!(r["config"]["beta0"].as_f64().unwrap() > 0.0);
}

#[test]
fn budget_exhaustion_exits_2_with_report() {
    let d = scratch("budget");
    let f = gen(&d, "r.json", &["--kind", "random", "--n", "30"]);
    let rep = d.join("rep.json");
    let o = run(bin().arg("solve").arg(&f).args(["--eps", "1e-9", "--max-iter", "3", "--report"]).arg(&rep));
    assert_eq!(o.status.code(), Some(2));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(rep).unwrap()).unwrap();
    assert_eq!(r["certified"], false);
    assert!(r["value"].as_f64().unwrap().is_finite());
}

#[test]
fn every_method_runs() {
    let d = scratch("methods");
    let f = gen(&d, "r.json", &["--kind", "random", "--n", "12", "--seed", "2"]);
    for m in [
        "hpd", "hpd-ls", "hpd-fm", "hpd-ls-fm", "gamma-hpd", "gamma-hpd-ls", "gamma-hpd-fm", "gamma-hpd-ls-fm", "hpd-scaled",
        "agd-scaled",
    ] {
        let o = run(bin().arg("solve").arg(&f).args(["--method", m, "--eps", "0.05", "--max-iter", "20000"]));
        assert!(matches!(o.status.code(), Some(0 | 2)), "{m}: {}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(report(&o)["method"], m);
    }
    for p in ["quad:0.01", "tv:0.3"] {
        let o = run(bin().arg("solve").arg(&f).args(["--penalty", p, "--eps", "0.05"]));
        assert!(matches!(o.status.code(), Some(0 | 2)), "{p}");
        assert_eq!(report(&o)["problem"], "unbalanced-ot");
    }
    let w = gen(&d, "w.json", &["--kind", "gaussian-wb", "--n", "10", "--m", "2"]);
    let o = run(bin().arg("solve").arg(&w).args(["--eps", "0.05", "--rho", "0.7"]));
    assert_eq!(report(&o)["barycenter"].as_array().unwrap().len(), 10);
    let o = run(bin().arg("solve").arg(&w).args(["--method", "agd-scaled"]));
    assert_eq!(o.status.code(), Some(64));
}

#[test]
fn trace_round_trips_into_identical_plot() {
    let d = scratch("trace");
    let f = gen(&d, "r.json", &["--kind", "random", "--n", "40", "--seed", "5"]);
    let (t, s1, s2) = (d.join("t.csv"), d.join("a.svg"), d.join("b.svg"));
    let o = run(bin().arg("solve").arg(&f).args(["--method", "hpd-ls", "--eps", "0.02"]).arg("--trace").arg(&t).arg("--svg").arg(&s1));
    assert!(matches!(o.status.code(), Some(0 | 2)));
    let o = run(bin().arg("plot").arg(&t).args(["--title", "hpd-ls", "--out"]).arg(&s2));
    assert!(o.status.success());
    assert_eq!(std::fs::read(&s1).unwrap(), std::fs::read(&s2).unwrap());
    let text = std::fs::read_to_string(&t).unwrap();
    assert!(text.starts_with("iter,tau,sigma,beta,theta,inner_iters,gap_raw,gap_rounded,primal_value,elapsed_s"));
}

fn bench_rows(args: &[&str], files: &[&Path]) -> Vec<Vec<String>> {
    let o = run(bin().arg("bench").args(files).args(args));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_reader(&o.stdout[..]);
    r.records().map(|x| x.unwrap().iter().map(str::to_string).collect()).collect()
}

#[test]
fn bench_matrix() {
    let d = scratch("bench");
    let a = gen(&d, "a.json", &["--kind", "random", "--n", "20", "--seed", "1"]);
    let b = gen(&d, "b.json", &["--kind", "gaussian", "--n", "20"]);
    let args = ["--methods", "hpd-ls,gamma-hpd-ls-fm", "--budget", "50"];
    let rows = bench_rows(&args, &[&a, &b]);
    assert_eq!(rows.len(), 4);
    // All columns except wall time repeat exactly.
    let again = bench_rows(&args, &[&a, &b]);
    for (x, y) in rows.iter().zip(&again) {
        assert_eq!(x[..7], y[..7]);
        assert_eq!(x[8], y[8]);
    }
    let zero = bench_rows(&["--methods", "hpd-ls,agd-scaled", "--budget", "0"], &[&a]);
    assert!(zero.iter().all(|r| r[5] == "0"));
    let missing = d.join("missing.json");
    let partial = bench_rows(&["--methods", "hpd-ls"], &[&missing, &a]);
    assert_eq!(partial[0][2], "error");
    assert_ne!(partial[1][2], "error");
}

#[test]
fn thread_cap_gives_identical_results() {
    let d = scratch("threads");
    let f = gen(&d, "r.json", &["--kind", "random", "--n", "60", "--seed", "9"]);
    let strip = |o: Output| {
        let mut r = report(&o);
        r.as_object_mut().unwrap().remove("wall_s");
        r
    };
    let one = strip(run(bin().arg("solve").arg(&f).env("OTWB_THREADS", "1")));
    let many = strip(run(bin().arg("solve").arg(&f).env("OTWB_THREADS", "4")));
    assert_eq!(one, many);
}
