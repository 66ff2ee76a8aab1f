use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::intra_inter_stats;
use crate::error::{Error, Result};
use crate::kernels::KernelConfig;
use crate::losses::{
    cc_loss, cc_loss_value, cckd_total, cckd_total_mimic, cross_entropy, kd_loss, mimic_loss,
    LossBreakdown, LossWeights,
};
use crate::matrix::Matrix;
use crate::nn::{sgd_momentum_step, Architecture, ForwardRecord, MlpModel, OptimizerState};
use crate::samplers::{
    cur_sample, superclasses, ur_sample, SamplerConfig, SamplerPlan, Strategy, SuperclassAssignment,
};

use super::config::{DataSource, ExperimentConfig, InstanceLoss, LossMode, NetworkConfig};
use super::data::{gen_synthetic, load_dataset, Dataset, Split};
use super::metrics::{EpochMetrics, MetricsRecord};

const TEACHER_INIT: u64 = 1;
const STUDENT_INIT: u64 = 2;
const TEACHER_BATCHES: u64 = 3;
const STUDENT_BATCHES: u64 = 4;
const HELDOUT_BATCHES: u64 = 5;
const SUPERCLASS_SEED: u64 = 6;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent seed for one random stream of an experiment.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream))
}

/// A configuration together with its loaded train/test splits.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub train: Dataset,
    pub test: Dataset,
}

impl Experiment {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (train, test) = match &config.data {
            DataSource::Synthetic(spec) => gen_synthetic(spec)?,
            DataSource::Csv { train, test } => (
                load_dataset(train, Split::Train)?,
                load_dataset(test, Split::Test)?,
            ),
        };
        Self::from_parts(config, train, test)
    }

    pub fn from_parts(config: ExperimentConfig, train: Dataset, test: Dataset) -> Result<Self> {
        config.validate()?;
        if train.is_empty() {
            return Err(Error::input("training split is empty"));
        }
        if train.input_dim() != test.input_dim() {
            return Err(Error::input(format!(
                "train has {} features but test has {}",
                train.input_dim(),
                test.input_dim()
            )));
        }
        let classes = train.class_count.max(test.class_count);
        let train = Dataset::new(train.features, train.labels, classes, Split::Train)?;
        let test = Dataset::new(test.features, test.labels, classes, Split::Test)?;
        Ok(Self {
            config,
            train,
            test,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.train.class_count
    }

    fn arch(&self, net: &NetworkConfig) -> Architecture {
        Architecture::new(
            self.train.input_dim(),
            &net.hidden,
            self.config.embedding_dim,
            self.num_classes(),
        )
    }

    pub fn teacher_architecture(&self) -> Architecture {
        self.arch(&self.config.teacher)
    }

    pub fn student_architecture(&self) -> Architecture {
        self.arch(&self.config.student)
    }

    pub fn run_id(&self, role: &str) -> String {
        format!("{role}-seed{}", self.config.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Accuracy {
    pub top1: f64,
    /// Reported only when there are more than five classes.
    pub top5: Option<f64>,
}

/// Fraction of rows whose label is among the `k` highest logits; ties are
/// broken towards lower class indices.
fn top_k_hits(logits: &Matrix, labels: &[usize], k: usize) -> usize {
    logits
        .row_iter()
        .zip(labels)
        .filter(|(row, &y)| {
            let target = row[y];
            let better = row
                .iter()
                .enumerate()
                .filter(|&(c, &v)| v > target || (v == target && c < y))
                .count();
            better < k
        })
        .count()
}

pub fn evaluate(model: &MlpModel, dataset: &Dataset) -> Result<Accuracy> {
    if dataset.input_dim() != model.input_dim() {
        return Err(Error::input(format!(
            "dataset has {} features but the model expects {}",
            dataset.input_dim(),
            model.input_dim()
        )));
    }
    if dataset.is_empty() {
        return Err(Error::input("cannot evaluate on an empty dataset"));
    }
    if let Some(&bad) = dataset.labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::input(format!(
            "label {bad} out of range for a {}-class model",
            model.num_classes()
        )));
    }
    let rec = model.forward(&dataset.features)?;
    let n = dataset.len() as f64;
    let top1 = top_k_hits(rec.logits(), &dataset.labels, 1) as f64 / n;
    let top5 =
        (model.num_classes() > 5).then(|| top_k_hits(rec.logits(), &dataset.labels, 5) as f64 / n);
    Ok(Accuracy { top1, top5 })
}

/// Effective loss weights and routing for one loss mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSetup {
    pub instance: InstanceLoss,
    pub weights: LossWeights,
    pub kernel: KernelConfig,
}

impl LossSetup {
    pub fn new(
        mode: LossMode,
        instance: InstanceLoss,
        weights: LossWeights,
        kernel: KernelConfig,
    ) -> Self {
        let (instance, weights) = match mode {
            LossMode::Ce => (
                InstanceLoss::Kd,
                LossWeights {
                    alpha: 1.0,
                    beta: 0.0,
                    ..weights
                },
            ),
            LossMode::Kd => (
                InstanceLoss::Kd,
                LossWeights {
                    beta: 0.0,
                    ..weights
                },
            ),
            LossMode::Mimic => (
                InstanceLoss::Mimic,
                LossWeights {
                    beta: 0.0,
                    ..weights
                },
            ),
            LossMode::Cckd => (instance, weights),
        };
        Self {
            instance,
            weights,
            kernel,
        }
    }

    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        Self::new(cfg.loss_mode, cfg.instance_loss, cfg.weights, cfg.kernel)
    }
}

/// Loss values and the gradients arriving at the student's logits and embeddings.
#[derive(Debug, Clone)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    pub grad_logits: Matrix,
    pub grad_embeddings: Matrix,
}

fn accumulate(acc: &mut Matrix, weight: f64, g: &Matrix) -> Result<()> {
    if weight != 0.0 {
        acc.add_assign(&g.scale(weight))?;
    }
    Ok(())
}

/// Every term is evaluated for logging; only weighted terms contribute
/// gradient. The correlation term is measured but not differentiated when
/// its weight is zero.
pub fn student_objective(
    setup: &LossSetup,
    student: &ForwardRecord,
    teacher: &ForwardRecord,
    labels: &[usize],
) -> Result<Objective> {
    let w = &setup.weights;
    let (ce, g_ce) = cross_entropy(student.logits(), labels)?;
    let (kd, g_kd) = kd_loss(student.logits(), teacher.logits(), w.tau)?;
    let mut grad_logits = Matrix::zeros(student.logits().rows(), student.logits().cols());
    let mut grad_embeddings =
        Matrix::zeros(student.embeddings().rows(), student.embeddings().cols());
    accumulate(&mut grad_logits, w.alpha, &g_ce)?;

    let cc = if w.beta != 0.0 {
        let (cc, g_cc) = cc_loss(student.embeddings(), teacher.embeddings(), &setup.kernel)?;
        accumulate(&mut grad_embeddings, w.beta, &g_cc)?;
        cc
    } else {
        cc_loss_value(student.embeddings(), teacher.embeddings(), &setup.kernel)?
    };

    let breakdown = match setup.instance {
        InstanceLoss::Kd => {
            accumulate(&mut grad_logits, 1.0 - w.alpha, &g_kd)?;
            cckd_total(ce, kd, cc, w)?
        }
        InstanceLoss::Mimic => {
            let (mimic, g_m) = mimic_loss(student.embeddings(), teacher.embeddings())?;
            accumulate(&mut grad_embeddings, 1.0 - w.alpha, &g_m)?;
            cckd_total_mimic(ce, kd, mimic, cc, w)?
        }
    };
    Ok(Objective {
        breakdown,
        grad_logits,
        grad_embeddings,
    })
}

/// Per-batch notification from the distillation loop.
#[derive(Debug, Clone, Copy)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub indices: &'a [usize],
    pub breakdown: &'a LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub metrics: MetricsRecord,
    /// k-means superclasses used by SUR sampling.
    pub superclasses: Option<SuperclassAssignment>,
}

#[derive(Default)]
struct Running {
    sum: LossBreakdown,
    mimic: f64,
    n: usize,
}

impl Running {
    fn push(&mut self, b: &LossBreakdown) {
        self.sum.ce += b.ce;
        self.sum.kd += b.kd;
        self.sum.cc += b.cc;
        self.sum.total += b.total;
        if let Some(m) = b.mimic {
            self.mimic += m;
            self.sum.mimic = Some(self.mimic);
        }
        self.n += 1;
    }

    fn mean(&self) -> LossBreakdown {
        let n = self.n.max(1) as f64;
        LossBreakdown {
            ce: self.sum.ce / n,
            kd: self.sum.kd / n,
            mimic: self.sum.mimic.map(|m| m / n),
            cc: self.sum.cc / n,
            total: self.sum.total / n,
        }
    }
}

enum BatchSource {
    Uniform(usize),
    Grouped(Vec<usize>),
}

impl BatchSource {
    fn plan(&self, cfg: &SamplerConfig, rng: &mut ChaCha8Rng) -> Result<SamplerPlan> {
        match self {
            BatchSource::Uniform(n) => ur_sample(*n, cfg, rng),
            BatchSource::Grouped(groups) => cur_sample(groups, cfg, rng),
        }
    }
}

fn final_similarity(model: &MlpModel, test: &Dataset) -> Option<crate::analysis::SimilarityStats> {
    if test.is_empty() {
        return None;
    }
    let rec = model.forward(&test.features).ok()?;
    intra_inter_stats(rec.embeddings(), &test.labels).ok()
}

fn optimizer(model: &MlpModel, net: &NetworkConfig) -> Result<OptimizerState> {
    let o = &net.optimizer;
    OptimizerState::new(model, o.lr, o.momentum, o.weight_decay)
}

/// Trains a teacher from scratch with cross-entropy under uniform sampling.
pub fn train_teacher(exp: &Experiment) -> Result<TrainOutcome> {
    let cfg = &exp.config;
    let mut model = MlpModel::init(
        &exp.teacher_architecture(),
        derive_seed(cfg.seed, TEACHER_INIT),
    )?;
    let mut opt = optimizer(&model, &cfg.teacher)?;
    let sampler = SamplerConfig {
        strategy: Strategy::Ur,
        ..cfg.sampler.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, TEACHER_BATCHES));
    let mut metrics = MetricsRecord::new(exp.run_id("teacher"));
    info!(
        "teacher {} on {} examples",
        model.describe(),
        exp.train.len()
    );

    for epoch in 0..cfg.teacher.epochs {
        opt.learning_rate = cfg.teacher.optimizer.lr_at(epoch);
        let plan = ur_sample(exp.train.len(), &sampler, &mut rng)?;
        let mut running = Running::default();
        for batch in &plan.batches {
            let (x, y) = exp.train.subset(batch);
            let rec = model.forward(&x)?;
            let (ce, g) = cross_entropy(rec.logits(), &y)?;
            let breakdown = cckd_total(
                ce,
                0.0,
                0.0,
                &LossWeights {
                    alpha: 1.0,
                    beta: 0.0,
                    tau: 1.0,
                },
            )
            .map_err(|e| Error::NonFinite(format!("teacher epoch {epoch}: {e}")))?;
            let zero_emb = Matrix::zeros(rec.embeddings().rows(), rec.embeddings().cols());
            let grads = model.backward(&rec, &g, &zero_emb)?;
            sgd_momentum_step(&mut model, &grads, &mut opt)?;
            running.push(&breakdown);
        }
        let acc = evaluate(&model, &exp.test)?;
        debug!(
            "teacher epoch {epoch}: ce {:.4} top1 {:.4}",
            running.mean().ce,
            acc.top1
        );
        metrics.epochs.push(EpochMetrics {
            epoch,
            lr: opt.learning_rate,
            train: running.mean(),
            test_top1: acc.top1,
            test_top5: acc.top5,
            test_cc: None,
        });
    }
    metrics.final_similarity = final_similarity(&model, &exp.test);
    Ok(TrainOutcome {
        model,
        metrics,
        superclasses: None,
    })
}

/// Fixed class-uniform batches over the test split, falling back to uniform
/// batches when the split cannot support the configured `b/k` classes.
fn heldout_plan(exp: &Experiment) -> Option<SamplerPlan> {
    let seed = derive_seed(exp.config.seed, HELDOUT_BATCHES);
    let cur = SamplerConfig {
        strategy: Strategy::Cur,
        ..exp.config.sampler.clone()
    };
    let plan =
        cur_sample(&exp.test.labels, &cur, &mut ChaCha8Rng::seed_from_u64(seed)).or_else(|_| {
            let ur = SamplerConfig {
                strategy: Strategy::Ur,
                ..cur.clone()
            };
            ur_sample(exp.test.len(), &ur, &mut ChaCha8Rng::seed_from_u64(seed))
        });
    plan.ok().filter(|p| !p.is_empty())
}

/// Mean correlation loss between student and teacher over `plan`.
pub fn heldout_cc(
    student: &MlpModel,
    teacher: &MlpModel,
    data: &Dataset,
    plan: &SamplerPlan,
    kernel: &KernelConfig,
) -> Result<f64> {
    let mut sum = 0.0;
    for batch in &plan.batches {
        let (x, _) = data.subset(batch);
        let s = student.forward(&x)?;
        let t = teacher.forward(&x)?;
        sum += cc_loss_value(s.embeddings(), t.embeddings(), kernel)?;
    }
    Ok(sum / plan.len().max(1) as f64)
}

pub fn distill_student(exp: &Experiment, teacher: &MlpModel) -> Result<TrainOutcome> {
    distill_student_with(exp, teacher, |_| {})
}

/// Distillation loop with a callback invoked after every optimizer step.
pub fn distill_student_with<F>(
    exp: &Experiment,
    teacher: &MlpModel,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&BatchEvent<'_>),
{
    let cfg = &exp.config;
    if teacher.embedding_dim() != cfg.embedding_dim {
        return Err(Error::config(format!(
            "teacher embedding width {} differs from the configured width {}",
            teacher.embedding_dim(),
            cfg.embedding_dim
        )));
    }
    if teacher.input_dim() != exp.train.input_dim() || teacher.num_classes() != exp.num_classes() {
        return Err(Error::config(format!(
            "teacher {} does not fit data with {} features and {} classes",
            teacher.describe(),
            exp.train.input_dim(),
            exp.num_classes()
        )));
    }
    let setup = LossSetup::from_config(cfg);
    let mut model = MlpModel::init(
        &exp.student_architecture(),
        derive_seed(cfg.seed, STUDENT_INIT),
    )?;
    let mut opt = optimizer(&model, &cfg.student)?;

    let (source, assignment) = match cfg.sampler.strategy {
        Strategy::Ur => (BatchSource::Uniform(exp.train.len()), None),
        Strategy::Cur => (BatchSource::Grouped(exp.train.labels.clone()), None),
        Strategy::Sur => {
            let km = SamplerConfig {
                seed: derive_seed(cfg.seed, SUPERCLASS_SEED),
                ..cfg.sampler.clone()
            };
            let a = superclasses(teacher, &exp.train.features, &km)?;
            info!("superclass sizes {:?}", a.cluster_sizes());
            (BatchSource::Grouped(a.assignments.clone()), Some(a))
        }
    };
    let heldout = heldout_plan(exp);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STUDENT_BATCHES));
    let run = match cfg.loss_mode {
        LossMode::Ce => "ce",
        LossMode::Kd => "kd",
        LossMode::Mimic => "mimic",
        LossMode::Cckd => "cckd",
    };
    let mut metrics = MetricsRecord::new(exp.run_id(run));
    info!("student {} distilled with {run}", model.describe());

    for epoch in 0..cfg.student.epochs {
        opt.learning_rate = cfg.student.optimizer.lr_at(epoch);
        let plan = source.plan(&cfg.sampler, &mut rng)?;
        let mut running = Running::default();
        for (bi, batch) in plan.batches.iter().enumerate() {
            let (x, y) = exp.train.subset(batch);
            let t = teacher.forward(&x)?;
            let s = model.forward(&x)?;
            let obj = student_objective(&setup, &s, &t, &y)
                .map_err(|e| Error::NonFinite(format!("epoch {epoch} batch {bi}: {e}")))?;
            let grads = model.backward(&s, &obj.grad_logits, &obj.grad_embeddings)?;
            sgd_momentum_step(&mut model, &grads, &mut opt)?;
            running.push(&obj.breakdown);
            observer(&BatchEvent {
                epoch,
                batch: bi,
                indices: batch,
                breakdown: &obj.breakdown,
            });
        }
        let acc = evaluate(&model, &exp.test)?;
        let test_cc = match &heldout {
            Some(p) => Some(heldout_cc(&model, teacher, &exp.test, p, &setup.kernel)?),
            None => None,
        };
        let mean = running.mean();
        debug!(
            "{run} epoch {epoch}: total {:.5} cc {:.5} top1 {:.4}",
            mean.total, mean.cc, acc.top1
        );
        metrics.epochs.push(EpochMetrics {
            epoch,
            lr: opt.learning_rate,
            train: mean,
            test_top1: acc.top1,
            test_top5: acc.top5,
            test_cc,
        });
    }
    metrics.final_similarity = final_similarity(&model, &exp.test);
    Ok(TrainOutcome {
        model,
        metrics,
        superclasses: assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::SyntheticSpec;
    use crate::nn::{Activation, DenseLayer};

    fn small_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            data: DataSource::Synthetic(SyntheticSpec {
                num_classes: 4,
                train_per_class: 40,
                test_per_class: 10,
                ..Default::default()
            }),
            ..Default::default()
        };
        cfg.embedding_dim = 4;
        cfg.teacher.hidden = vec![16];
        cfg.teacher.epochs = 3;
        cfg.student.epochs = 2;
        cfg.sampler.batch_size = 8;
        cfg.sampler.per_class = 2;
        cfg
    }

    fn ds(rows: &[&[f64]], labels: Vec<usize>, c: usize) -> Dataset {
        Dataset::new(Matrix::from_rows(rows).unwrap(), labels, c, Split::Test).unwrap()
    }

    #[test]
    fn derived_seeds_differ_per_stream() {
        let s: Vec<u64> = (1..=6).map(|k| derive_seed(7, k)).collect();
        for i in 0..s.len() {
            for j in 0..i {
                assert_ne!(s[i], s[j]);
            }
        }
        assert_eq!(derive_seed(7, 1), derive_seed(7, 1));
        assert_ne!(derive_seed(7, 1), derive_seed(8, 1));
    }

    fn fixed_model(w: &[&[f64]]) -> MlpModel {
        let c = w[0].len();
        let emb = DenseLayer::new(
            Matrix::identity(w.len()),
            vec![0.0; w.len()],
            Activation::Identity,
        )
        .unwrap();
        let out = DenseLayer::new(
            Matrix::from_rows(w).unwrap(),
            vec![0.0; c],
            Activation::Identity,
        )
        .unwrap();
        MlpModel::new(vec![emb, out], 0).unwrap()
    }

    #[test]
    fn evaluate_examples() {
        // constant class 0 via a bias-free model on positive inputs
        let m = fixed_model(&[&[1.0, 0.0], &[1.0, 0.0]]);
        let d = ds(&[&[1.0, 2.0], &[3.0, 0.5]], vec![0, 0], 2);
        assert_eq!(evaluate(&m, &d).unwrap().top1, 1.0);

        // identity logits: one correct, one incorrect
        let m = fixed_model(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let d = ds(&[&[2.0, 1.0], &[2.0, 1.0]], vec![0, 1], 2);
        let acc = evaluate(&m, &d).unwrap();
        assert_eq!(acc.top1, 0.5);
        assert_eq!(acc.top5, None);

        let wide = ds(&[&[1.0, 2.0, 3.0]], vec![0], 2);
        assert!(matches!(evaluate(&m, &wide), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn top5_counts_ranks() {
        let logits = Matrix::from_rows(&[&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0, 0.0]]).unwrap();
        assert_eq!(top_k_hits(&logits, &[4], 5), 1);
        assert_eq!(top_k_hits(&logits, &[5], 5), 0);
        assert_eq!(top_k_hits(&logits, &[0], 1), 1);
    }

    #[test]
    fn teacher_training_is_deterministic() {
        let exp = Experiment::new(small_config()).unwrap();
        let a = train_teacher(&exp).unwrap();
        let b = train_teacher(&exp).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.metrics.epochs.len(), 3);
        assert!(a
            .metrics
            .epochs
            .iter()
            .all(|e| (0.0..=1.0).contains(&e.test_top1)));
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let mut cfg = small_config();
        cfg.teacher.epochs = 0;
        let exp = Experiment::new(cfg).unwrap();
        let out = train_teacher(&exp).unwrap();
        assert!(out.metrics.epochs.is_empty());
        assert_eq!(
            out.model,
            MlpModel::init(&exp.teacher_architecture(), derive_seed(0, TEACHER_INIT)).unwrap()
        );
    }

    #[test]
    fn distill_leaves_teacher_untouched_and_logs_cc() {
        let exp = Experiment::new(small_config()).unwrap();
        let teacher = train_teacher(&exp).unwrap().model;
        let before = teacher.clone();
        let out = distill_student(&exp, &teacher).unwrap();
        assert_eq!(teacher, before);
        assert_eq!(out.metrics.run_id, "cckd-seed0");
        assert!(out
            .metrics
            .epochs
            .iter()
            .all(|e| e.train.cc > 0.0 && e.test_cc.is_some()));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let exp = Experiment::new(small_config()).unwrap();
        let mut other = small_config();
        other.embedding_dim = 5;
        let teacher =
            MlpModel::init(&Experiment::new(other).unwrap().teacher_architecture(), 0).unwrap();
        assert!(matches!(
            distill_student(&exp, &teacher),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn sur_reports_superclasses() {
        let mut cfg = small_config();
        cfg.sampler.strategy = Strategy::Sur;
        cfg.sampler.num_superclasses = 4;
        let exp = Experiment::new(cfg).unwrap();
        let teacher = train_teacher(&exp).unwrap().model;
        let out = distill_student(&exp, &teacher).unwrap();
        let a = out.superclasses.unwrap();
        assert_eq!(a.assignments.len(), exp.train.len());
        assert_eq!(a.num_clusters(), 4);
    }

    #[test]
    fn ce_mode_uses_only_cross_entropy() {
        let mut cfg = small_config();
        cfg.loss_mode = LossMode::Ce;
        let exp = Experiment::new(cfg).unwrap();
        let teacher = train_teacher(&exp).unwrap().model;
        distill_student_with(&exp, &teacher, |ev| {
            assert_eq!(ev.breakdown.total, ev.breakdown.ce);
        })
        .unwrap();
    }
}
