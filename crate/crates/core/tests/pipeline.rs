use std::collections::HashSet;
use std::path::Path;

use reglearn::error::Error;
use reglearn::linalg::norm2;
use reglearn::pipeline::*;
use reglearn::regparam::k_dp_from_residuals;
use reglearn::solvers::TikhonovProblem;
use serde_json::json;

fn heat_config(train: usize, val: usize, seed: u64) -> ExperimentConfig {
    let cfg = json!({
        "version": 1,
        "name": "heat-test",
        "seed": seed,
        "problem": {"kind": "heat", "n": 24, "kappa": 1.0},
        "train_samples": train,
        "val_samples": val,
        "noise": {"mode": "variance", "lo": 0.001, "hi": 0.1},
        "network": {"input_shape": [24], "heads": [{"name": "lambda", "layers": [
            {"type": "dense", "inputs": 24, "outputs": 8}, {"type": "relu"},
            {"type": "dense", "inputs": 8, "outputs": 4}, {"type": "relu"},
            {"type": "linear_output", "inputs": 4, "outputs": 1}
        ]}]},
        "training": {"optimizer": {"type": "adam", "lr": 0.01}, "batch_size": 8, "epochs": 5, "seed": 3},
        "baselines": {"elm": true, "oed": true}
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn tomography_config() -> ExperimentConfig {
    let cfg = json!({
        "version": 1,
        "name": "tomo-test",
        "seed": 5,
        "problem": {"kind": "tomography", "side": 16, "n_angles": 8, "n_rays": 12,
                    "split_bregman": {"outer_iters": 10, "inner_cg_iters": 5}},
        "train_samples": 4,
        "val_samples": 2,
        "noise": {"mode": "relative_level", "lo": 0.01, "hi": 0.05},
        "search": {"lo": -5.0, "hi": 0.0, "tol": 0.2},
        "network": {"input_shape": [1, 8, 12], "heads": [{"name": "lambda", "layers": [
            {"type": "conv2d", "kernel_h": 3, "kernel_w": 3, "in_channels": 1, "out_channels": 2, "pad": 1},
            {"type": "relu"}, {"type": "avgpool2d", "k": 2},
            {"type": "linear_output", "inputs": 48, "outputs": 1}
        ]}]},
        "training": {"optimizer": {"type": "adam", "lr": 0.01}, "batch_size": 2, "epochs": 3, "seed": 1},
        "baselines": {"elm": true}
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn deblur_config() -> ExperimentConfig {
    let cfg = json!({
        "version": 1,
        "name": "deblur-test",
        "seed": 6,
        "problem": {"kind": "deblur_star", "side": 16, "blur_sigma": 1.0, "stencil": 5, "gamma_lo": 1.25, "gamma_hi": 2.5,
                    "split_bregman": {"outer_iters": 10, "inner_cg_iters": 5}},
        "train_samples": 4,
        "val_samples": 2,
        "noise": {"mode": "relative_level", "lo": 0.01, "hi": 0.05},
        "search": {"lo": -5.0, "hi": 0.0, "tol": 0.2},
        "network": {"input_shape": [1, 16, 16],
            "trunk": [
                {"type": "conv2d", "kernel_h": 3, "kernel_w": 3, "in_channels": 1, "out_channels": 2, "pad": 1},
                {"type": "batchnorm2d", "channels": 2}, {"type": "relu"}, {"type": "maxpool2d", "k": 4}
            ],
            "heads": [
                {"name": "gamma", "layers": [{"type": "linear_output", "inputs": 32, "outputs": 1}]},
                {"name": "lambda", "layers": [
                    {"type": "dense", "inputs": 32, "outputs": 4}, {"type": "relu"},
                    {"type": "linear_output", "inputs": 4, "outputs": 1}
                ]}
            ]},
        "training": {"optimizer": {"type": "adam", "lr": 0.01}, "batch_size": 2, "epochs": 3, "seed": 1},
        "stage2": {"optimizer": {"type": "adam", "lr": 0.01}, "batch_size": 2, "epochs": 3, "seed": 2}
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn diffusion_config(train: usize, val: usize) -> ExperimentConfig {
    let cfg = json!({
        "version": 1,
        "name": "diffusion-test",
        "seed": 8,
        "problem": {"kind": "diffusion", "side": 8, "t_final": 0.01, "n_steps": 20, "k_max": 15, "init_length_scale": 7.0},
        "train_samples": train,
        "val_samples": val,
        "noise": {"mode": "relative_level", "lo": 0.00001, "hi": 0.5},
        "network": {"input_shape": [1, 8, 8], "heads": [{"name": "k", "kind": "stopping_iteration", "layers": [
            {"type": "conv2d", "kernel_h": 3, "kernel_w": 3, "in_channels": 1, "out_channels": 2, "pad": 1},
            {"type": "relu"}, {"type": "avgpool2d", "k": 2}, {"type": "dropout", "rate": 0.2},
            {"type": "linear_output", "inputs": 32, "outputs": 1}
        ]}]},
        "training": {"optimizer": {"type": "sgd_momentum", "lr": 0.001, "momentum": 0.9}, "batch_size": 4, "epochs": 3, "seed": 1}
    });
    ExperimentConfig::from_json(&cfg.to_string()).unwrap()
}

fn pool(threads: usize) -> rayon::ThreadPool {
    thread_pool(threads).unwrap()
}

fn run_all(cfg: &ExperimentConfig, root: &Path, threads: usize) -> EvaluationReport {
    let paths = ArtifactPaths::new(root);
    let p = pool(threads);
    generate_stage(cfg, &paths, &p).unwrap();
    train_stage(cfg, &paths, &p).unwrap();
    evaluate_stage(cfg, &paths, &p).unwrap()
}

fn files_under(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn artifacts_are_byte_identical_across_thread_counts_and_reruns() {
    let cfg = heat_config(30, 10, 11);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    run_all(&cfg, a.path(), 1);
    run_all(&cfg, b.path(), 3);
    run_all(&cfg, c.path(), 1);
    let fa = files_under(a.path());
    // 7 arrays and a manifest per split, two model files, two report files
    assert_eq!(fa.len(), 8 * 2 + 2 + 2);
    assert!(fa == files_under(b.path()), "thread count changed an artifact");
    assert!(fa == files_under(c.path()), "rerun changed an artifact");
}

#[test]
fn requested_sizes_and_dataset_invariants() {
    let cfg = heat_config(25, 7, 2);
    let exp = Experiment::build(&cfg.problem).unwrap();
    let p = pool(2);
    let train = generate_dataset(&cfg, &exp, Split::Train, &p).unwrap();
    let val = generate_dataset(&cfg, &exp, Split::Validation, &p).unwrap();
    assert_eq!((train.len(), val.len()), (25, 7));
    let s = cfg.search();
    for ds in [&train, &val] {
        assert_eq!(ds.failed_count(), 0);
        assert!([&ds.truths, &ds.inputs].iter().all(|v| v.len() == ds.len()));
        assert!([&ds.noise, &ds.gamma, &ds.lambda_opt, &ds.k_opt, &ds.objective]
            .iter()
            .all(|v| v.len() == ds.len()));
        for &l in &ds.lambda_opt {
            assert!(l >= 10f64.powf(s.lo) && l <= 10f64.powf(s.hi));
        }
    }
    assert_ne!(train.inputs[0], val.inputs[0]);

    let dir = tempfile::tempdir().unwrap();
    train.save(dir.path(), &cfg).unwrap();
    let back = Dataset::load(dir.path()).unwrap();
    let bits = |d: &Dataset| {
        let cols = [&d.noise, &d.gamma, &d.lambda_opt, &d.k_opt, &d.objective];
        let mut v: Vec<u64> = cols.iter().flat_map(|c| c.iter().map(|x| x.to_bits())).collect();
        v.extend(d.inputs.iter().chain(&d.truths).flatten().map(|x| x.to_bits()));
        v
    };
    assert_eq!(bits(&back), bits(&train));
    assert_eq!((back.seed, &back.config_hash, &back.failed), (train.seed, &train.config_hash, &train.failed));
}

#[test]
fn train_and_validation_streams_never_overlap() {
    let mut seen = HashSet::new();
    for split in [Split::Train, Split::Validation] {
        for j in 0..2000 {
            assert!(seen.insert(sample_stream(42, split, j).seed()));
        }
    }
}

#[test]
fn oracle_lambda_is_locally_optimal() {
    let cfg = heat_config(20, 1, 17);
    let exp = Experiment::build(&cfg.problem).unwrap();
    let ds = generate_dataset(&cfg, &exp, Split::Train, &pool(1)).unwrap();
    for j in 0..ds.len() {
        let err = |l: f64| norm2(&sub(&exp.reconstruct(&ds.inputs[j], l).unwrap(), &ds.truths[j]));
        let e = err(ds.lambda_opt[j]);
        assert!((e - ds.objective[j]).abs() <= 1e-12 * e);
        assert!(err(2.0 * ds.lambda_opt[j]) >= e, "sample {j}");
        assert!(err(0.5 * ds.lambda_opt[j]) >= e, "sample {j}");
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[test]
fn oed_of_one_sample_is_its_oracle_lambda() {
    let cfg = heat_config(1, 1, 23);
    let exp = Experiment::build(&cfg.problem).unwrap();
    let p = pool(1);
    let ds = generate_dataset(&cfg, &exp, Split::Train, &p).unwrap();
    let model = run_offline(&cfg, &exp, &ds, &p).unwrap();
    let oed = model.baselines.oed_lambda.unwrap();
    assert!((oed - ds.lambda_opt[0]).abs() <= 1e-12 * ds.lambda_opt[0]);
    assert!(model.baselines.elm.is_some());
    assert_eq!(model.checkpoint.history.len(), 1);
    assert_eq!(model.checkpoint.history[0].epoch_loss.len(), cfg.training.epochs);
}

#[test]
fn oed_lambda_matches_a_grid_scan() {
    let cfg = heat_config(50, 1, 29);
    let exp = Experiment::build(&cfg.problem).unwrap();
    let p = pool(1);
    let ds = generate_dataset(&cfg, &exp, Split::Train, &p).unwrap();
    let model = run_offline(&cfg, &exp, &ds, &p).unwrap();
    let Experiment::Heat { svd, .. } = &exp else { unreachable!() };
    let problems: Vec<TikhonovProblem> = ds.inputs.iter().map(|b| TikhonovProblem::new(svd, b).unwrap()).collect();
    let mean_sq = |l: f64| {
        problems
            .iter()
            .zip(&ds.truths)
            .map(|(pr, t)| norm2(&sub(&pr.solve(l), t)).powi(2))
            .sum::<f64>()
            / (2.0 * problems.len() as f64)
    };
    let s = cfg.search();
    let cell = (s.hi - s.lo) / 299.0;
    let (best, _) = (0..300)
        .map(|i| s.lo + i as f64 * cell)
        .map(|t| (t, mean_sq(10f64.powf(t))))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let found = model.baselines.oed_lambda.unwrap().log10();
    assert!((found - best).abs() <= cell, "golden {found}, grid {best}");
    assert!(mean_sq(10f64.powf(found)) <= mean_sq(10f64.powf(best)) * (1.0 + 1e-9));
}

#[test]
fn mismatched_config_is_refused() {
    let cfg = heat_config(5, 2, 1);
    let dir = tempfile::tempdir().unwrap();
    let paths = ArtifactPaths::new(dir.path());
    let p = pool(1);
    generate_stage(&cfg, &paths, &p).unwrap();
    let mut other = cfg.clone();
    other.seed = 2;
    assert!(matches!(train_stage(&other, &paths, &p), Err(Error::ConfigMismatch { .. })));
    train_stage(&cfg, &paths, &p).unwrap();
    let mut bigger = cfg.clone();
    bigger.val_samples = 3;
    assert!(matches!(evaluate_stage(&bigger, &paths, &p), Err(Error::ConfigMismatch { .. })));
    assert_ne!(cfg.hash(), other.hash());
}

fn check_report(report: &EvaluationReport, val: &Dataset) {
    for r in &report.rows {
        let opt = r.method("opt");
        for m in &r.methods {
            assert!(m.err_l2.is_nan() || m.err_l2 >= 0.0);
            assert!(m.err_l1.is_nan() || m.err_l1 >= 0.0);
            if !r.oracle_suboptimal && opt.err_l2.is_finite() && m.err_l2.is_finite() {
                assert!(m.err_l2 >= opt.err_l2 - SUBOPTIMAL_TOL);
            }
        }
        assert_eq!(r.noise.to_bits(), val.noise[r.sample].to_bits());
    }
}

#[test]
fn heat_report_round_trip_and_summary() {
    let cfg = heat_config(40, 12, 31);
    let dir = tempfile::tempdir().unwrap();
    let report = run_all(&cfg, dir.path(), 2);
    let paths = ArtifactPaths::new(dir.path());
    let val = Dataset::load(&paths.dataset(Split::Validation)).unwrap();
    check_report(&report, &val);

    let back = EvaluationReport::read(&paths.report()).unwrap();
    assert_eq!(back.rows.len(), report.rows.len());
    for (a, b) in back.rows.iter().zip(&report.rows) {
        let bits = |r: &ReportRow| {
            let mut v = vec![r.noise.to_bits(), r.gamma_true.to_bits(), r.gamma_dnn.to_bits()];
            for m in &r.methods {
                v.extend([m.param.to_bits(), m.err_l2.to_bits(), m.err_l1.to_bits()]);
            }
            v
        };
        assert_eq!(bits(a), bits(b));
        assert_eq!((a.sample, a.dp_failed, a.oracle_suboptimal, a.failed), (b.sample, b.dp_failed, b.oracle_suboptimal, b.failed));
    }
    assert!(back.summary == report.summary);

    for name in ["opt", "dnn", "elm", "gcv", "upre", "oed"] {
        assert!(report.summary.methods.contains_key(name), "{name}");
    }
    // opt column reproduces the stored oracle objective
    for r in &report.rows {
        let scale = norm2(&val.truths[r.sample]);
        let opt = r.method("opt");
        assert_eq!(opt.param.to_bits(), val.lambda_opt[r.sample].to_bits());
        assert!((opt.err_l2 * scale - val.objective[r.sample]).abs() <= 1e-12 * val.objective[r.sample]);
    }
    // medians recomputed independently from the CSV rows
    let text = std::fs::read_to_string(paths.report().join(ROWS_FILE)).unwrap();
    let mut lines = text.lines();
    let cols: Vec<&str> = lines.next().unwrap().split(',').collect();
    let data: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|f| f.parse().unwrap()).collect()).collect();
    for (name, summary) in &report.summary.methods {
        let c = cols.iter().position(|h| *h == format!("err_l2_{name}")).unwrap();
        let mut v: Vec<f64> = data.iter().map(|row| row[c]).filter(|x| x.is_finite()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        let median = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
        assert!((summary.err_l2.median - median).abs() <= 1e-15 * median, "{name}");
        assert_eq!(summary.err_l2.count, n);
    }
    assert!(report.summary == summarize(&report.summary.config_hash, "heat", &back.rows, false));
}

#[test]
fn tomography_smoke() {
    let cfg = tomography_config();
    let dir = tempfile::tempdir().unwrap();
    let report = run_all(&cfg, dir.path(), 2);
    let val = Dataset::load(&ArtifactPaths::new(dir.path()).dataset(Split::Validation)).unwrap();
    check_report(&report, &val);
    for r in &report.rows {
        for name in ["opt", "dnn", "elm"] {
            assert!(r.method(name).is_present(), "{name}");
        }
        for name in ["gcv", "upre", "dp", "oed"] {
            assert!(!r.method(name).is_present(), "{name}");
        }
    }
}

#[test]
fn deblur_smoke_records_gamma() {
    let cfg = deblur_config();
    let dir = tempfile::tempdir().unwrap();
    let report = run_all(&cfg, dir.path(), 1);
    let model = Model::load(&ArtifactPaths::new(dir.path()).model()).unwrap();
    assert_eq!(model.checkpoint.history.len(), 2);
    assert_eq!(model.checkpoint.history[1].epoch_loss.len(), 3);
    for r in &report.rows {
        assert!((1.25..=2.5).contains(&r.gamma_true));
        assert!(r.gamma_dnn.is_finite());
        assert!(r.method("opt").err_l1.is_finite() && r.method("dnn").err_l1.is_finite());
    }
}

#[test]
fn diffusion_flags_discrepancy_failures_exactly() {
    let cfg = diffusion_config(6, 12);
    let dir = tempfile::tempdir().unwrap();
    let report = run_all(&cfg, dir.path(), 2);
    let val = Dataset::load(&ArtifactPaths::new(dir.path()).dataset(Split::Validation)).unwrap();
    let exp = Experiment::build(&cfg.problem).unwrap();
    check_report(&report, &val);
    assert!(report.summary.stopping.is_some());
    for r in &report.rows {
        let (b, x) = (&val.inputs[r.sample], &val.truths[r.sample]);
        let h = exp.iterate_history(b, x).unwrap();
        assert!(val.k_opt[r.sample] >= 1.0);
        let img = reglearn::forward::GridImage::new(8, 8, b.clone()).unwrap();
        let sigma = reglearn::regparam::estimate_noise_level_2d(&img).unwrap();
        let level = reglearn::regparam::relative_noise_level(b, sigma).unwrap();
        let bn = norm2(b);
        let rel: Vec<f64> = h.residual_norms.iter().map(|v| v / bn).collect();
        let none_meets = rel.iter().all(|&v| v > 1.01 * level);
        assert_eq!(r.dp_failed, none_meets, "sample {}", r.sample);
        let expect = k_dp_from_residuals(&rel, level, 1.01).unwrap();
        assert_eq!(r.method("dp").param, expect.value);
        let k = r.method("opt").param as usize;
        let errs = h.relative_errors.as_ref().unwrap();
        let direct = norm2(&sub(&h.iterates[k - 1], x)) / norm2(x);
        assert!((r.method("opt").err_l2 - direct).abs() <= 1e-14 * direct);
        assert!(errs.iter().all(|&e| e >= errs[k - 1]));
    }
}
