use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const PRIOR: &str = r#"
[prior]
kind = ["gaussian", "gaussian"]
weights = [0.5, 0.5]
locations = [-2.0, 2.0]
scales = [0.5, 0.5]

[noise]
sigma2 = 1.0
"#;

fn bin(args: &[&str], config: Option<&Path>, out: &Path) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmse-pnp"));
    cmd.args(args).arg("--out").arg(out);
    if let Some(c) = config {
        cmd.arg("--config").arg(c);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("cfg.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn regularizer_recovery_writes_curve() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{PRIOR}\n[grid]\nrange = [-4.0, 4.0]\npoints = 81\n"));
    let o = bin(&["regularizer-recovery"], Some(&cfg), &dir.path().join("r"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("r_curve.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,f_x,f_z,phi_explicit,phi_envelope,in_image"));
    assert_eq!(lines.count(), 81);
}

#[test]
fn gaussian_regularizer_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let text = "[prior]\nkind = [\"gaussian\"]\nweights = [1.0]\nlocations = [0.0]\nscales = [1.0]\n[noise]\nsigma2 = 0.5\n";
    let cfg = write_config(dir.path(), text);
    let o = bin(&["regularizer-recovery"], Some(&cfg), &dir.path().join("g"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("g_curve.csv")).unwrap();
    for line in csv.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let (a, b): (f64, f64) = (f[3].parse().unwrap(), f[4].parse().unwrap());
        assert!((a - b).abs() <= 1e-6, "{line}");
    }
}

#[test]
fn missing_prior_exits_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[noise]\nsigma2 = 1.0\n");
    let o = bin(&["denoiser-check"], Some(&cfg), &dir.path().join("x"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("prior"), "{}", stderr(&o));
}

#[test]
fn unknown_and_duplicate_keys_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{PRIOR}\nsurprise = 1\n"));
    assert_eq!(bin(&["denoiser-check"], Some(&cfg), &dir.path().join("x")).status.code(), Some(1));
    let cfg = write_config(dir.path(), &PRIOR.replace("sigma2 = 1.0", "sigma2 = 1.0\nsigma2 = 1.0"));
    let o = bin(&["denoiser-check"], Some(&cfg), &dir.path().join("x"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
}

#[test]
fn oversized_lambda_rejected_before_iterating() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "{PRIOR}\n[operator]\nkind = \"identity\"\nn = 16\nmeasurement_sigma2 = 0.1\n\n[solver]\nlambda = 2.0\n"
    );
    let cfg = write_config(dir.path(), &text);
    let o = bin(&["deblur"], Some(&cfg), &dir.path().join("d"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("L"), "{}", stderr(&o));
    assert!(!dir.path().join("d_trace.csv").exists());
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    let o = Command::new(env!("CARGO_BIN_EXE_mmse-pnp")).arg("no-such-command").output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let o = Command::new(env!("CARGO_BIN_EXE_mmse-pnp")).arg("--help").output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    let o = Command::new(env!("CARGO_BIN_EXE_mmse-pnp")).arg("deblur").output().unwrap();
    assert_eq!(o.status.code(), Some(1), "deblur without --config");
}

#[test]
fn deblur_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!(
        "seed = 5\n{PRIOR}\n[operator]\nkind = \"conv1d\"\nn = 64\nkernel = [0.25, 0.5, 0.25]\nmeasurement_sigma2 = 0.01\n\n[solver]\nmax_iters = 20\n"
    );
    let cfg = write_config(dir.path(), &text);
    for run in ["a", "b"] {
        let o = bin(&["deblur"], Some(&cfg), &dir.path().join(run));
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    }
    for suffix in ["trace.csv", "truth.csv", "observation.csv", "reconstruction.csv"] {
        let a = std::fs::read(dir.path().join(format!("a_{suffix}"))).unwrap();
        let b = std::fs::read(dir.path().join(format!("b_{suffix}"))).unwrap();
        assert!(a == b, "{suffix} differs between identical runs");
    }
    let trace = std::fs::read_to_string(dir.path().join("a_trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("k,F,residual,best_residual,descent_slack,step_norm,psnr"));
    assert_eq!(trace.lines().count(), 21);
}

#[test]
fn dense_operator_from_matrix_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("a.txt"), "0.5 0.2 0\n0 0.5 0.2\n0.2 0 0.5\n").unwrap();
    let text = format!(
        "{PRIOR}\n[operator]\nkind = \"dense\"\nmatrix_file = \"a.txt\"\nmeasurement_sigma2 = 0.01\n\n[solver]\nmax_iters = 5\ninit = \"adjoint\"\n"
    );
    let cfg = write_config(dir.path(), &text);
    let o = bin(&["deblur"], Some(&cfg), &dir.path().join("m"));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}
