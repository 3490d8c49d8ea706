//! Acceptance criteria, one PASS/FAIL line each.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::{
    loop_batch_spread, loop_instance_stats, max_abs_diff, normal_tensor, random_region, rng, styled, Mlp,
};
use dsu::adaptation::calibrate;
use dsu::dsu::{dsu_forward, dsu_forward_fixed, DsuConfig, Mode};
use dsu::harness::{run_lodo, Config, LodoSummary};
use dsu::stats::{batch_uncertainty, instance_stats};
use dsu::synth::{generate, TaskSpec};
use dsu::theory::verify::{check_implicit_reg, check_w2, VerifyConfig};
use dsu::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = (bool, String);

fn implicit_regularization() -> Outcome {
    let start = Instant::now();
    let c = check_implicit_reg(&VerifyConfig::default()).unwrap();
    let elapsed = start.elapsed();
    (
        c.passed && elapsed <= Duration::from_secs(30),
        format!("worst gap / allowed = {:.3}, {:.1?}", c.value, elapsed),
    )
}

fn gaussian_w2() -> Outcome {
    let checks = check_w2(&VerifyConfig::default()).unwrap();
    let detail = checks
        .iter()
        .map(|c| format!("{} {:.1e}", c.name, c.value))
        .collect::<Vec<_>>()
        .join(", ");
    (checks.iter().all(|c| c.passed), detail)
}

fn layer_identity_and_replacement() -> Outcome {
    let mut r = rng(100);
    let mut identity: f64 = 0.0;
    for _ in 0..100 {
        let x = normal_tensor(&mut r, &[4, 3, 4, 4]).map(|v| 2.0 * v + 1.0);
        let zero = Tensor::zeros([4, 3]);
        let (out, _) = dsu_forward_fixed(&x, &zero, &zero, 1e-6).unwrap();
        let scale = x.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        identity = identity.max(max_abs_diff(out.data(), x.data()) / scale);
    }

    let cfg = DsuConfig { p: 0.0, ..DsuConfig::default() };
    let mut gate = dsu::rng::stream(0, "acceptance/gate");
    let gated_identity = (0..100).all(|_| {
        let x = normal_tensor(&mut r, &[4, 3, 2, 2]);
        dsu_forward(&x, &cfg, &mut gate, Mode::Train).unwrap() == x
    });

    let (mut cases, mut replacement) = (0, 0.0f64);
    while cases < 100 {
        let (b, c) = (r.random_range(2..6), r.random_range(1..5));
        let x = normal_tensor(&mut r, &[b, c, 3, 3]).scale(r.random_range(0.5..3.0));
        let em = normal_tensor(&mut r, &[b, c]);
        let es = normal_tensor(&mut r, &[b, c]);
        let (out, s) = dsu_forward_fixed(&x, &em, &es, 0.0).unwrap();
        if s.gamma.data().iter().any(|&g| g <= 0.0) {
            continue;
        }
        let t = instance_stats(&out, 0.0).unwrap();
        replacement = replacement
            .max(max_abs_diff(t.mu.data(), s.beta.data()))
            .max(max_abs_diff(t.sigma.data(), s.gamma.data()));
        cases += 1;
    }
    (
        identity <= 1e-4 && gated_identity && replacement <= 1e-5,
        format!("identity {identity:.1e}, p=0 bitwise {gated_identity}, replacement {replacement:.1e}"),
    )
}

fn differentiability() -> Outcome {
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 10 {
        let m = Mlp::random(&mut r);
        if !m.well_conditioned() {
            continue;
        }
        worst = worst.max(m.gradient_error());
        cases += 1;
    }
    (worst <= 1e-4, format!("worst relative error {worst:.2e} over 10 cases"))
}

fn calibration_invariants() -> Outcome {
    let mut r = rng(102);
    let (mut no_op, mut idem, mut contraction_ok) = (0.0f64, 0.0f64, true);
    for _ in 0..1000 {
        let c = r.random_range(1..5);
        let omega = r.random_range(0.0..=1.0);
        let g = random_region(&mut r, c, omega);
        let pick = |r: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * r.random_range(0.05..0.95);
        let mu: Vec<f64> = (0..c).map(|k| pick(&mut r, g.mu_interval(k))).collect();
        let sigma: Vec<f64> = (0..c).map(|k| pick(&mut r, g.sigma_interval(k))).collect();
        let x = styled(&mut r, &mu, &sigma);
        let out = calibrate(&x, &g, 1e-6).unwrap().output;
        let scale = x.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        no_op = no_op.max(max_abs_diff(out.data(), x.data()) / scale);
    }
    for _ in 0..1000 {
        let c = r.random_range(1..5);
        let g = random_region(&mut r, c, 1.0);
        let mu: Vec<f64> = (0..c).map(|_| r.random_range(-6.0..6.0)).collect();
        let sigma: Vec<f64> = (0..c).map(|_| r.random_range(0.5..5.0)).collect();
        let x = styled(&mut r, &mu, &sigma);
        let once = calibrate(&x, &g, 0.0).unwrap().output;
        let twice = calibrate(&once, &g, 0.0).unwrap().output;
        idem = idem.max(max_abs_diff(once.data(), twice.data()));
    }
    for _ in 0..1000 {
        let c = r.random_range(1..5);
        let omega = r.random_range(0.0..=1.0);
        let g = random_region(&mut r, c, omega);
        for k in 0..c {
            let (mu, sigma) = (r.random_range(-8.0..8.0), r.random_range(0.01..6.0));
            contraction_ok &= (g.calibrate_mu(k, mu).0 - g.mu_bar[k]).abs() <= (mu - g.mu_bar[k]).abs();
            contraction_ok &= (g.calibrate_sigma(k, sigma).0 - g.sigma_bar[k]).abs() <= (sigma - g.sigma_bar[k]).abs();
        }
    }
    let worked = common::region(vec![2.0], vec![1.0], vec![1.0], vec![0.0], 1.0, 0.5).calibrate_mu(0, 5.0).0;
    (
        no_op <= 1e-4 && idem <= 1e-5 && contraction_ok && worked == 4.0,
        format!("no-op {no_op:.1e}, idempotence {idem:.1e}, contraction {contraction_ok}, worked example beta = {worked}"),
    )
}

fn statistics_oracles() -> Outcome {
    let mut r = rng(103);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let shape = [r.random_range(1..6), r.random_range(1..5), r.random_range(1..5), r.random_range(1..5)];
        let x = normal_tensor(&mut r, &shape).scale(r.random_range(0.1..5.0));
        let s = instance_stats(&x, 1e-6).unwrap();
        let u = batch_uncertainty(&s).unwrap();
        let (mu, sigma) = loop_instance_stats(&x, 1e-6);
        worst = worst
            .max(max_abs_diff(s.mu.data(), &mu))
            .max(max_abs_diff(s.sigma.data(), &sigma))
            .max(max_abs_diff(u.sigma_mu.data(), &loop_batch_spread(&mu, shape[0], shape[1])))
            .max(max_abs_diff(u.sigma_sigma.data(), &loop_batch_spread(&sigma, shape[0], shape[1])));
    }
    let mut perm: f64 = 0.0;
    for _ in 0..50 {
        let b = r.random_range(2..8);
        let x = normal_tensor(&mut r, &[b, 3, 2, 2]);
        let mut order: Vec<usize> = (0..b).collect();
        order.shuffle(&mut r);
        let u1 = batch_uncertainty(&instance_stats(&x, 1e-6).unwrap()).unwrap();
        let u2 = batch_uncertainty(&instance_stats(&x.select_rows(&order).unwrap(), 1e-6).unwrap()).unwrap();
        perm = perm
            .max(max_abs_diff(u1.sigma_mu.data(), u2.sigma_mu.data()))
            .max(max_abs_diff(u1.sigma_sigma.data(), u2.sigma_sigma.data()));
    }
    (
        worst <= 1e-12 && perm <= 1e-12,
        format!("loop oracle {worst:.1e}, permutation {perm:.1e}"),
    )
}

fn lodo_ordering(s: &LodoSummary, elapsed: Duration) -> Outcome {
    let [base, _, plain, full] = s.mean_accuracy;
    let passed = full >= plain
        && plain >= base
        && plain - base >= 0.02
        && s.sign_test_p < 0.05
        && elapsed <= Duration::from_secs(600);
    (
        passed,
        format!(
            "baseline {base:.4}, dsu {plain:.4}, dsu++ {full:.4}, wins {}/{} (ties {}), p = {:.4}, {:.0?}",
            s.dsu_wins,
            s.seeds.len(),
            s.dsu_ties,
            s.sign_test_p,
            elapsed
        ),
    )
}

fn distance_direction(s: &LodoSummary) -> Outcome {
    let mean = |i: usize| s.seeds.iter().map(|r| r.distance[i]).sum::<f64>() / s.seeds.len() as f64;
    (
        s.distance_wins >= 8,
        format!(
            "lower on dsu features in {}/{} seeds (mean {:.3} vs {:.3})",
            s.distance_wins,
            s.seeds.len(),
            mean(1),
            mean(0)
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_dsu"))
        .args(args)
        .current_dir(dir)
        .env_remove("DSU_SEED")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let small = ["--data.samples_per_class=40", "--train.epochs=2", "--runs=2", "--report.projections=8"];
    for run in ["a", "b"] {
        let with = |base: &[&str]| -> Vec<String> {
            base.iter().chain(&small).map(|s| s.replace("{run}", run)).collect()
        };
        let steps: Vec<Vec<String>> = vec![
            with(&["gen-data", "--out", "{run}/data"]),
            with(&["train", "--data", "a/data", "--out", "{run}/train"]),
            vec!["eval".into(), "--checkpoint".into(), "a/train/checkpoint.toml".into(), "--out".into(), format!("{run}/eval")],
            vec!["report-stats".into(), "--checkpoint".into(), "a/train/checkpoint.toml".into(), "--out".into(), format!("{run}/stats")],
            with(&["ablate", "--study", "modules,p", "--train.epochs=1", "--out", "{run}/ablate"]),
            vec!["verify-theory".into(), "--draws".into(), "2000".into(), "--out".into(), format!("{run}/theory")],
        ];
        for s in &steps {
            let args: Vec<&str> = s.iter().map(String::as_str).collect();
            run_cli(d, &args);
        }
    }
    let mut compared = 0;
    let mut differing = Vec::new();
    for sub in ["data", "train", "eval", "stats", "ablate", "theory"] {
        let mut names: Vec<_> = std::fs::read_dir(d.join("a").join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let a = std::fs::read(d.join("a").join(sub).join(&name)).unwrap();
            let b = std::fs::read(d.join("b").join(sub).join(&name)).unwrap();
            compared += 1;
            if a != b {
                differing.push(format!("{sub}/{}", name.to_string_lossy()));
            }
        }
    }
    (
        differing.is_empty(),
        format!("{compared} files compared across six subcommands, differing: {differing:?}"),
    )
}

fn guarded(f: impl FnOnce() -> Outcome) -> Outcome {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

fn report(index: usize, name: &str, (passed, detail): Outcome) -> bool {
    println!("{} {index}. {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    passed
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut ok = true;
    ok &= report(1, "implicit regularization closed form vs sampling", guarded(implicit_regularization));
    ok &= report(2, "gaussian W2 checks", guarded(gaussian_w2));
    ok &= report(3, "layer identity and statistic replacement", guarded(layer_identity_and_replacement));
    ok &= report(4, "gradients through an MLP with the layer", guarded(differentiability));
    ok &= report(5, "calibration invariants", guarded(calibration_invariants));
    ok &= report(6, "statistics oracles", guarded(statistics_oracles));

    let start = Instant::now();
    let lodo = catch_unwind(|| {
        let cfg = Config::default();
        let data = generate(&TaskSpec::from_config(&cfg.data).unwrap()).unwrap();
        run_lodo(&cfg, &data).unwrap()
    });
    let elapsed = start.elapsed();
    match &lodo {
        Ok(s) => {
            ok &= report(7, "leave-one-domain-out ordering", lodo_ordering(s, elapsed));
            ok &= report(8, "domain distance direction", distance_direction(s));
        }
        Err(_) => {
            ok &= report(7, "leave-one-domain-out ordering", (false, "experiment failed".into()));
            ok &= report(8, "domain distance direction", (false, "experiment failed".into()));
        }
    }
    ok &= report(9, "byte-identical reports on rerun", guarded(determinism));
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
