use approx::assert_abs_diff_eq;

use cckd::analysis::{cosine_similarity_matrix, export_curves, export_heatmap, import_heatmap};
use cckd::harness::{
    distill_student, evaluate, gen_synthetic, train_teacher, write_dataset_csv, DataSource,
    Experiment, ExperimentConfig, LossMode, MetricsRecord, SyntheticSpec,
};
use cckd::nn::{load_checkpoint, save_checkpoint};
use cckd::samplers::Strategy;

fn config(spread: f64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSpec {
            train_per_class: 60,
            test_per_class: 20,
            spread,
            ..Default::default()
        }),
        ..Default::default()
    };
    cfg.teacher.hidden = vec![32, 32];
    cfg.teacher.epochs = 8;
    cfg.teacher.optimizer.decay_epochs = vec![5, 7];
    cfg.student.epochs = 4;
    cfg.student.optimizer.decay_epochs = vec![3];
    cfg
}

#[test]
fn separable_data_gives_an_accurate_teacher() {
    let exp = Experiment::new(config(0.02)).unwrap();
    let out = train_teacher(&exp).unwrap();
    let acc = evaluate(&out.model, &exp.test).unwrap();
    assert!(acc.top1 >= 0.95, "teacher top-1 {}", acc.top1);
    assert_eq!(out.metrics.last().unwrap().test_top1, acc.top1);
    assert_eq!(acc.top5, Some(1.0));
}

#[test]
fn untrained_teacher_is_near_chance() {
    let mut cfg = config(0.1);
    cfg.teacher.epochs = 0;
    let exp = Experiment::new(cfg).unwrap();
    let acc = evaluate(&train_teacher(&exp).unwrap().model, &exp.test).unwrap();
    assert!(acc.top1 < 0.4, "untrained top-1 {}", acc.top1);
}

#[test]
fn learning_rate_follows_the_schedule() {
    let exp = Experiment::new(config(0.1)).unwrap();
    let out = train_teacher(&exp).unwrap();
    let lrs: Vec<f64> = out.metrics.epochs.iter().map(|e| e.lr).collect();
    let o = &exp.config.teacher.optimizer;
    assert_eq!(lrs, (0..8).map(|e| o.lr_at(e)).collect::<Vec<_>>());
    assert_eq!(lrs[7], 0.1 * 0.1f64.powi(2));
}

#[test]
fn checkpointed_teacher_distills_identically() {
    let dir = tempfile::tempdir().unwrap();
    let exp = Experiment::new(config(0.1)).unwrap();
    let teacher = train_teacher(&exp).unwrap().model;
    let path = dir.path().join("teacher.json");
    save_checkpoint(&teacher, &path).unwrap();
    let reloaded = load_checkpoint(&path).unwrap();
    assert_eq!(reloaded, teacher);
    let a = distill_student(&exp, &teacher).unwrap();
    let b = distill_student(&exp, &reloaded).unwrap();
    assert_eq!(a.metrics.to_jsonl().unwrap(), b.metrics.to_jsonl().unwrap());
}

#[test]
fn csv_data_source_matches_synthetic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(0.1);
    let DataSource::Synthetic(spec) = &cfg.data else {
        unreachable!()
    };
    let (train, test) = gen_synthetic(spec).unwrap();
    let (tp, sp) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    write_dataset_csv(&train, &tp).unwrap();
    write_dataset_csv(&test, &sp).unwrap();
    let mut csv_cfg = cfg.clone();
    csv_cfg.data = DataSource::Csv {
        train: tp,
        test: sp,
    };
    let from_csv = Experiment::new(csv_cfg).unwrap();
    let synthetic = Experiment::new(cfg).unwrap();
    assert_eq!(from_csv.train, synthetic.train);
    assert_eq!(from_csv.test, synthetic.test);
}

#[test]
fn kd_runs_log_measured_cc_and_curves_export() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(0.1);
    let exp = Experiment::new(cfg.clone()).unwrap();
    let teacher = train_teacher(&exp).unwrap().model;
    let mut records = Vec::new();
    for mode in [LossMode::Kd, LossMode::Cckd, LossMode::Mimic] {
        cfg.loss_mode = mode;
        let out = distill_student(&Experiment::new(cfg.clone()).unwrap(), &teacher).unwrap();
        assert!(out
            .metrics
            .epochs
            .iter()
            .all(|e| e.train.cc > 0.0 && e.test_cc.unwrap() > 0.0));
        records.push(out.metrics);
    }
    assert!(records[2].epochs.iter().all(|e| e.train.mimic.is_some()));
    let path = dir.path().join("curves.csv");
    export_curves(&records, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 3 * 4);
    for line in text.lines().skip(1).filter(|l| l.starts_with("kd-")) {
        let cc: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(cc > 0.0);
    }

    let jsonl: String = records.iter().map(|r| r.to_jsonl().unwrap()).collect();
    let back = MetricsRecord::from_jsonl(&jsonl).unwrap();
    assert_eq!(
        back.iter().map(|r| r.run_id.as_str()).collect::<Vec<_>>(),
        ["kd-seed0", "cckd-seed0", "mimic-seed0"]
    );
}

#[test]
fn student_heatmap_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(0.1);
    cfg.sampler.strategy = Strategy::Sur;
    let exp = Experiment::new(cfg).unwrap();
    let teacher = train_teacher(&exp).unwrap().model;
    let out = distill_student(&exp, &teacher).unwrap();
    assert!(out.superclasses.is_some());
    let picked: Vec<usize> = (0..12).collect();
    let emb = out
        .model
        .forward(&exp.test.features.select_rows(&picked))
        .unwrap()
        .embeddings()
        .clone();
    let labels: Vec<usize> = picked.iter().map(|&i| exp.test.labels[i]).collect();
    let s = cosine_similarity_matrix(&emb);
    let path = dir.path().join("heatmap.csv");
    export_heatmap(&s, &labels, &path).unwrap();
    let back = import_heatmap(&path).unwrap();
    for (a, b) in back.as_slice().iter().zip(s.as_slice()) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-8);
    }
    for i in 0..12 {
        assert_eq!(s[(i, i)], 1.0);
    }
}
