//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so every criterion reports even when an earlier one fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cckd::analysis::intra_inter_stats;
use cckd::harness::{
    distill_student, distill_student_with, gen_synthetic, student_objective, train_teacher,
    DataSource, Experiment, ExperimentConfig, InstanceLoss, LossMode, LossSetup, SyntheticSpec,
};
use cckd::kernels::{
    correlation_matrix, pairwise_correlation, rbf_taylor, KernelConfig, KernelKind,
};
use cckd::losses::LossWeights;
use cckd::nn::{gradient_check, Architecture, MlpModel};
use cckd::samplers::{cur_sample, superclasses, SamplerConfig, Strategy};
use cckd::Matrix;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| StandardNormal.sample(rng))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn unit_vector(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn gradient_fidelity() -> Outcome {
    let (b, d, c, input) = (4, 3, 3, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x = random_matrix(b, input, &mut rng);
    let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
    let student = MlpModel::init(&Architecture::new(input, &[6], d, c), 11).unwrap();
    let teacher = MlpModel::init(&Architecture::new(input, &[7, 5], d, c), 12).unwrap();
    let t_rec = teacher.forward(&x).unwrap();
    let weights = LossWeights {
        alpha: 0.5,
        beta: 1.0,
        tau: 2.0,
    };
    let mut setups: Vec<(String, LossSetup)> = [LossMode::Ce, LossMode::Kd, LossMode::Mimic]
        .into_iter()
        .map(|m| {
            (
                format!("{m:?}"),
                LossSetup::new(m, InstanceLoss::Kd, weights, KernelConfig::default()),
            )
        })
        .collect();
    for kind in KernelKind::ALL {
        let kernel = KernelConfig {
            gamma: 0.4,
            ..KernelConfig::new(kind)
        };
        setups.push((
            format!("cckd/{}", kind.name()),
            LossSetup::new(LossMode::Cckd, InstanceLoss::Kd, weights, kernel),
        ));
        setups.push((
            format!("cckd+mimic/{}", kind.name()),
            LossSetup::new(LossMode::Cckd, InstanceLoss::Mimic, weights, kernel),
        ));
    }
    let mut worst = (0.0f64, String::new());
    let mut failed = Vec::new();
    let mut checked = 0;
    for (name, setup) in &setups {
        let report = gradient_check(
            &student,
            |m: &MlpModel| {
                let s = m.forward(&x)?;
                let obj = student_objective(setup, &s, &t_rec, &labels)?;
                let g = m.backward(&s, &obj.grad_logits, &obj.grad_embeddings)?;
                Ok((obj.breakdown.total, g.flatten()))
            },
            1e-4,
        )
        .unwrap();
        checked += report.entries.len();
        if report.max_rel_error > worst.0 {
            worst = (report.max_rel_error, name.clone());
        }
        if !report.passed() {
            failed.push(name.clone());
        }
    }
    outcome(
        failed.is_empty(),
        format!(
            "{} objectives, {checked} parameters checked, max rel err {:.2e} ({}){}",
            setups.len(),
            worst.0,
            worst.1,
            if failed.is_empty() {
                String::new()
            } else {
                format!(", failing: {failed:?}")
            }
        ),
    )
}

fn taylor_convergence() -> Outcome {
    let gamma = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
        .map(|i| {
            let d = 2 + i % 7;
            (unit_vector(d, &mut rng), unit_vector(d, &mut rng))
        })
        .collect();
    let exact = KernelConfig::rbf_exact(gamma);
    let mut max_err = [0.0f64; 3];
    for (x, y) in &pairs {
        let e = pairwise_correlation(x, y, &exact).unwrap();
        for (slot, order) in max_err.iter_mut().zip(1..=3) {
            *slot = slot.max((rbf_taylor(x, y, gamma, order).unwrap() - e).abs());
        }
    }
    let monotone = max_err.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        monotone && max_err[2] <= 0.018,
        format!(
            "max |err| P=1 {:.5}, P=2 {:.5}, P=3 {:.5} (bound 0.018)",
            max_err[0], max_err[1], max_err[2]
        ),
    )
}

fn sampler_invariants() -> Outcome {
    let b = 40;
    let ks = [1, 2, 4, 8, 20];
    let (data, _) = gen_synthetic(&SyntheticSpec {
        num_classes: 50,
        train_per_class: 16,
        test_per_class: 1,
        input_dim: 4,
        spread: 0.3,
        seed: 3,
    })
    .unwrap();
    let teacher = MlpModel::init(&Architecture::new(4, &[16], 8, 50), 5).unwrap();
    let mut violations = Vec::new();
    let mut batches = 0;
    for seed in 0..100u64 {
        let km = SamplerConfig {
            strategy: Strategy::Sur,
            batch_size: b,
            per_class: 1,
            num_superclasses: 45,
            kmeans_iters: 10,
            seed,
        };
        let sc = superclasses(&teacher, &data.features, &km)
            .unwrap()
            .assignments;
        for &k in &ks {
            for (name, groups) in [("cur", &data.labels), ("sur", &sc)] {
                let cfg = SamplerConfig {
                    strategy: if name == "cur" {
                        Strategy::Cur
                    } else {
                        Strategy::Sur
                    },
                    per_class: k,
                    ..km.clone()
                };
                let plan = cur_sample(groups, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                let again = cur_sample(groups, &cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
                batches += plan.len();
                if plan.is_empty() || plan != again {
                    violations.push(format!(
                        "{name} seed {seed} k {k}: empty or not reproducible"
                    ));
                }
                if let Err(e) = plan.check_group_balance(groups, b, k) {
                    violations.push(format!("{name} seed {seed} k {k}: {e}"));
                }
            }
        }
    }
    outcome(
        violations.is_empty(),
        format!(
            "{} plans, {batches} batches checked{}",
            100 * ks.len() * 2,
            violations
                .first()
                .map(|v| format!(", first violation: {v}"))
                .unwrap_or_default()
        ),
    )
}

fn small_fixture() -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSpec {
            train_per_class: 100,
            test_per_class: 20,
            ..Default::default()
        }),
        ..Default::default()
    };
    cfg.teacher.hidden = vec![32, 32];
    cfg.teacher.epochs = 4;
    cfg.student.epochs = 4;
    cfg.student.optimizer.decay_epochs = vec![2];
    cfg
}

fn loss_bookkeeping() -> Outcome {
    let mut cfg = small_fixture();
    cfg.seed = 3;
    cfg.weights = LossWeights {
        alpha: 0.0,
        beta: 0.003,
        tau: 4.0,
    };
    let exp = Experiment::new(cfg.clone()).unwrap();
    let teacher = train_teacher(&exp).unwrap().model;
    let mut max_dev = 0.0f64;
    let mut n = 0;
    distill_student_with(&exp, &teacher, |ev| {
        let b = ev.breakdown;
        max_dev = max_dev.max((b.total - (b.kd + 0.003 * b.cc)).abs());
        n += 1;
    })
    .unwrap();

    cfg.weights.beta = 0.0;
    let zero_beta = distill_student(&Experiment::new(cfg.clone()).unwrap(), &teacher).unwrap();
    cfg.loss_mode = LossMode::Kd;
    let kd = distill_student(&Experiment::new(cfg).unwrap(), &teacher).unwrap();
    let identical = zero_beta.metrics.epochs == kd.metrics.epochs && zero_beta.model == kd.model;
    outcome(
        max_dev <= 1e-12 && identical,
        format!(
            "{n} batches, max |total - (kd + 0.003 cc)| = {max_dev:.1e}; beta=0 trace identical to kd over {} epochs: {identical}",
            kd.metrics.epochs.len()
        ),
    )
}

struct SeedResult {
    top1: [f64; 3],
    heldout_cc: [f64; 3],
    intra: [f64; 3],
}

fn directional_runs() -> (Vec<SeedResult>, Duration) {
    let start = Instant::now();
    let results = (0..5u64)
        .map(|seed| {
            let mut cfg = ExperimentConfig {
                seed,
                ..Default::default()
            };
            let exp = Experiment::new(cfg.clone()).unwrap();
            let teacher = train_teacher(&exp).unwrap().model;
            let mut r = SeedResult {
                top1: [0.0; 3],
                heldout_cc: [0.0; 3],
                intra: [0.0; 3],
            };
            for (i, mode) in [LossMode::Ce, LossMode::Kd, LossMode::Cckd]
                .into_iter()
                .enumerate()
            {
                cfg.loss_mode = mode;
                let e = Experiment::from_parts(cfg.clone(), exp.train.clone(), exp.test.clone())
                    .unwrap();
                let out = distill_student(&e, &teacher).unwrap();
                let last = out.metrics.last().unwrap();
                r.top1[i] = last.test_top1;
                r.heldout_cc[i] = last.test_cc.unwrap();
                let emb = out
                    .model
                    .forward(&e.test.features)
                    .unwrap()
                    .embeddings()
                    .clone();
                r.intra[i] = intra_inter_stats(&emb, &e.test.labels).unwrap().mean_intra;
            }
            r
        })
        .collect();
    (results, start.elapsed())
}

fn directional(results: &[SeedResult], elapsed: Duration) -> Vec<(String, Outcome)> {
    let mean =
        |f: &dyn Fn(&SeedResult) -> f64| results.iter().map(f).sum::<f64>() / results.len() as f64;
    let (ce, kd, cckd) = (
        mean(&|r| r.top1[0]),
        mean(&|r| r.top1[1]),
        mean(&|r| r.top1[2]),
    );
    let lower = results
        .iter()
        .filter(|r| r.heldout_cc[2] < r.heldout_cc[1])
        .count();
    let (intra_kd, intra_cckd) = (mean(&|r| r.intra[1]), mean(&|r| r.intra[2]));
    let fast = elapsed < Duration::from_secs(300);
    vec![
        (
            "5a KD top-1 >= CE top-1".into(),
            outcome(kd >= ce, format!("KD {kd:.4} vs CE {ce:.4}")),
        ),
        (
            "5b CCKD top-1 >= CE top-1".into(),
            outcome(cckd >= ce, format!("CCKD {cckd:.4} vs CE {ce:.4}")),
        ),
        (
            "5c held-out cc lower for CCKD than KD".into(),
            outcome(
                lower >= 4,
                format!(
                    "{lower}/5 seeds; per seed KD/CCKD {}",
                    results
                        .iter()
                        .map(|r| format!("{:.5}/{:.5}", r.heldout_cc[1], r.heldout_cc[2]))
                        .collect::<Vec<_>>()
                        .join(" ")
                ),
            ),
        ),
        (
            "5d CCKD intra-class cosine >= KD".into(),
            outcome(
                intra_cckd >= intra_kd,
                format!("CCKD {intra_cckd:.5} vs KD {intra_kd:.5}"),
            ),
        ),
        (
            "5 runtime < 300 s".into(),
            outcome(
                fast,
                format!(
                    "{:.1} s for 5 seeds x (teacher + 3 students)",
                    elapsed.as_secs_f64()
                ),
            ),
        ),
    ]
}

fn brute_cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

fn brute_kernel(x: &[f64], y: &[f64], cfg: &KernelConfig) -> f64 {
    match cfg.kind {
        KernelKind::Mmd => {
            (x.iter().sum::<f64>() / x.len() as f64 - y.iter().sum::<f64>() / y.len() as f64).abs()
        }
        KernelKind::Bilinear => x.iter().zip(y).map(|(a, b)| a * b).sum(),
        KernelKind::RbfExact => {
            (-cfg.gamma * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).exp()
        }
        KernelKind::RbfTaylor => {
            let unit = |v: &[f64]| {
                let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                v.iter().map(|a| a / n).collect::<Vec<f64>>()
            };
            let (u, w) = (unit(x), unit(y));
            let dot: f64 = u.iter().zip(&w).map(|(a, b)| a * b).sum();
            let mut term = 1.0;
            let mut sum = 1.0;
            for p in 1..=cfg.order {
                term *= 2.0 * cfg.gamma * dot / p as f64;
                sum += term;
            }
            (-2.0 * cfg.gamma).exp() * sum
        }
    }
}

fn oracle_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut max_stat = 0.0f64;
    let mut max_corr = 0.0f64;
    for _ in 0..50 {
        let b = rng.random_range(3..=8);
        let d = rng.random_range(1..=4);
        let f = random_matrix(b, d, &mut rng);
        // guarantee one repeated label and at least two classes
        let mut labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..3)).collect();
        labels[1] = labels[0];
        labels[2] = (labels[0] + 1) % 3;
        let stats = intra_inter_stats(&f, &labels).unwrap();
        let (mut si, mut ni, mut sx, mut nx) = (0.0, 0, 0.0, 0);
        for i in 0..b {
            for j in 0..b {
                if i == j {
                    continue;
                }
                let c = brute_cosine(f.row(i), f.row(j));
                if labels[i] == labels[j] {
                    si += c;
                    ni += 1;
                } else {
                    sx += c;
                    nx += 1;
                }
            }
        }
        max_stat = max_stat
            .max((stats.mean_intra - si / ni as f64).abs())
            .max((stats.mean_inter - sx / nx as f64).abs());

        for kind in KernelKind::ALL {
            let cfg = KernelConfig {
                gamma: 0.4,
                order: 2,
                ..KernelConfig::new(kind)
            };
            let cm = correlation_matrix(&f, &cfg).unwrap();
            for i in 0..b {
                for j in 0..b {
                    max_corr =
                        max_corr.max((cm[(i, j)] - brute_kernel(f.row(i), f.row(j), &cfg)).abs());
                }
            }
        }
    }
    outcome(
        max_stat <= 1e-12 && max_corr <= 1e-12,
        format!("50 instances: stats max dev {max_stat:.1e}, correlation max dev {max_corr:.1e} (4 kernels)"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("x.json");
    let mut cfg = small_fixture();
    cfg.sampler.strategy = Strategy::Cur;
    std::fs::write(&config, cfg.to_json().unwrap()).unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_cckd"))
            .args(["distill", "--config"])
            .arg(&config)
            .args(["--seed", "7", "--out"])
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success(), "cckd distill exited with {status}");
        std::fs::read(out.join("metrics.jsonl")).unwrap()
    };
    let (a, b) = (run("a"), run("b"));
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    outcome(
        !a.is_empty() && a == b,
        format!(
            "{} bytes, {lines} epoch lines, identical: {}",
            a.len(),
            a == b
        ),
    )
}

fn main() -> ExitCode {
    let mut all_pass = true;
    let mut report = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let start = Instant::now();
        let o = f();
        all_pass &= o.pass;
        println!(
            "[{}] {name}: {} ({:.2} s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    };
    report("1 gradient fidelity", &mut gradient_fidelity);
    report("2 taylor convergence", &mut taylor_convergence);
    report("3 sampler invariants", &mut sampler_invariants);
    report("4 loss bookkeeping", &mut loss_bookkeeping);
    let (results, elapsed) = directional_runs();
    for (name, o) in directional(&results, elapsed) {
        report(&name, &mut || Outcome {
            pass: o.pass,
            detail: o.detail.clone(),
        });
    }
    report("6 oracle equivalence", &mut oracle_equivalence);
    report("7 cli determinism", &mut cli_determinism);
    if all_pass {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: at least one criterion failed");
        ExitCode::FAILURE
    }
}
