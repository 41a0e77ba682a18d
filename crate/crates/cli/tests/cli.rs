use std::path::Path;
use std::process::{Command, Output};

fn mnpfs(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mnpfs"))
        .args(args)
        .env("MNPFS_RUN_ROOT", root)
        .env("RAYON_NUM_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn calibrate_writes_one_margin_per_angle_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let flags = ["--J", "6", "--q", "1", "--mu-gamma", "0", "--sigma-gamma", "1", "--nu", "5", "--M", "4000", "--seed", "7"];
    for out in [&a, &b] {
        let mut args = vec!["calibrate"];
        args.extend(flags);
        args.extend(["--out", out.to_str().unwrap()]);
        ok(&mnpfs(&args, dir.path()));
    }
    let pa = std::fs::read(a.join("prior.txt")).unwrap();
    assert_eq!(pa, std::fs::read(b.join("prior.txt")).unwrap());
    let text = String::from_utf8(pa).unwrap();
    let margins = text.lines().filter(|l| !l.starts_with('#') && !l.starts_with("l,")).count();
    assert_eq!(margins, 11);
    assert_eq!(csv_rows(&a.join("diagnostics.csv")).len(), 11);
    assert!(a.join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = mnpfs(&["calibrate", "--J", "3", "--nu", "0.5"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = mnpfs(&["calibrate", "--J", "3", "--mu-gamma", "lots"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = mnpfs(&["fit", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = mnpfs(&["evaluate", dir.path().to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_without_prior_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(&mnpfs(&["simulate", "--alternatives", "3", "--n", "50"], dir.path()));
    let data = dir.path().join("simulate").join("dataset.csv");
    let out = mnpfs(&["fit", "--data", data.to_str().unwrap(), "--variant", "mnp-fs"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("prior"));
    let missing = dir.path().join("nope.txt");
    let out = mnpfs(
        &["fit", "--data", data.to_str().unwrap(), "--variant", "mnp-fs", "--prior", missing.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn simulate_fit_and_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(&mnpfs(&["simulate", "--alternatives", "3", "--n", "200", "--seed", "3"], root));
    let data = root.join("simulate").join("dataset.csv");
    ok(&mnpfs(&["calibrate", "--J", "2", "--M", "3000", "--out", root.join("prior").to_str().unwrap()], root));
    let prior = root.join("prior").join("prior.txt");
    let fs_dir = root.join("fs");
    let i_dir = root.join("i");
    ok(&mnpfs(
        &[
            "fit", "--data", data.to_str().unwrap(), "--variant", "mnp-fs", "--prior", prior.to_str().unwrap(),
            "--iterations", "300", "--burn-in", "100", "--out", fs_dir.to_str().unwrap(),
        ],
        root,
    ));
    ok(&mnpfs(
        &[
            "fit", "--data", data.to_str().unwrap(), "--variant", "mnp-i", "--iterations", "300", "--burn-in", "100",
            "--out", i_dir.to_str().unwrap(),
        ],
        root,
    ));
    let metrics = csv_rows(&fs_dir.join("metrics.csv"));
    assert_eq!(metrics.len(), 4);
    assert_eq!(metrics[0][0], "mnp-fs");
    assert_eq!(metrics[3][0..2], ["naive".to_string(), "out".to_string()]);
    for f in ["manifest.json", "draws/beta.csv", "draws/kappa.csv", "draws/draws.json", "acceptance.csv", "split.csv"] {
        assert!(fs_dir.join(f).exists(), "{f}");
    }
    assert_eq!(csv_rows(&fs_dir.join("acceptance.csv")).len(), 3);

    // a run against itself: no marks, p = 1
    let same = root.join("same");
    ok(&mnpfs(&["evaluate", fs_dir.to_str().unwrap(), fs_dir.to_str().unwrap(), "--out", same.to_str().unwrap()], root));
    let table = csv_rows(&same.join("comparison.csv"));
    assert_eq!(table.len(), 2);
    assert!(table[1].iter().skip(2).step_by(2).all(|m| m.is_empty()));
    for row in csv_rows(&same.join("pvalues.csv")) {
        assert_eq!(row[5], "1");
    }

    // scores are recomputed when missing
    std::fs::remove_file(i_dir.join("scores.csv")).unwrap();
    let cmp = root.join("cmp");
    ok(&mnpfs(&["evaluate", fs_dir.to_str().unwrap(), i_dir.to_str().unwrap(), "--out", cmp.to_str().unwrap()], root));
    assert!(i_dir.join("scores.csv").exists());
    assert_eq!(csv_rows(&cmp.join("pvalues.csv")).len(), 4);

    // different splits are rejected
    let other = root.join("other");
    ok(&mnpfs(
        &[
            "fit", "--data", data.to_str().unwrap(), "--variant", "mnp-i", "--iterations", "200", "--burn-in", "100",
            "--set", "eval.split_seed=99", "--out", other.to_str().unwrap(),
        ],
        root,
    ));
    let out = mnpfs(&["evaluate", fs_dir.to_str().unwrap(), other.to_str().unwrap()], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("split mismatch"));
}

#[test]
fn experiment_writes_outputs_and_warns_at_paper_scale() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = root.join("exp.txt");
    std::fs::write(
        &manifest,
        "dgp.n_alternatives = 3\ndgp.n = 150\nsampler.total_iterations = 200\nsampler.burn_in = 100\n\
         sampler.thinning = 2\nprior.draws = 3000\nprior.solver_draws = 3000\nsensitivity.grid_points = 3\n",
    )
    .unwrap();
    let out = root.join("exp");
    ok(&mnpfs(
        &["experiment", "--config", manifest.to_str().unwrap(), "--sensitivity", "--out", out.to_str().unwrap()],
        root,
    ));
    for f in ["manifest.json", "metrics.csv", "recovery.csv", "scatter.csv", "curves.csv", "sensitivity.csv", "truth_sigma.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let groups: std::collections::BTreeSet<String> =
        csv_rows(&out.join("scatter.csv")).into_iter().map(|r| r[1].clone()).collect();
    assert_eq!(groups.into_iter().collect::<Vec<_>>(), ["coefficients", "correlations", "variances"]);
    assert_eq!(csv_rows(&out.join("sensitivity.csv")).len(), 2);
    // experiment directories expand to their models
    let ev = root.join("ev");
    ok(&mnpfs(&["evaluate", out.to_str().unwrap(), "--out", ev.to_str().unwrap()], root));
    assert_eq!(csv_rows(&ev.join("comparison.csv")).len(), 3);

    let warn = mnpfs(&["experiment", "--paper-scale", "--set", "dgp.n=0"], root);
    assert_eq!(warn.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&warn.stderr).contains("200,000"));
}
