use std::path::Path;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        class_count: usize,
        split: Split,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::input(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::input(format!(
                "label {bad} out of range for {class_count} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        Ok(Self {
            features,
            labels,
            class_count,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    /// Classes in `0..class_count` with no examples.
    pub fn absent_classes(&self) -> Vec<usize> {
        let mut seen = vec![false; self.class_count];
        for &l in &self.labels {
            seen[l] = true;
        }
        (0..self.class_count).filter(|&c| !seen[c]).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> (Matrix, Vec<usize>) {
        (
            self.features.select_rows(indices),
            indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }
}

/// Parameters of the Gaussian-cluster fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub input_dim: usize,
    /// Standard deviation of each class cluster around its mean.
    pub spread: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            train_per_class: 500,
            test_per_class: 100,
            input_dim: 2,
            spread: 0.1,
            seed: 0,
        }
    }
}

/// Isotropic Gaussian clusters around standard-normal class means. Train
/// examples are drawn first, then test examples, from one seeded stream.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<(Dataset, Dataset)> {
    if spec.num_classes == 0 || spec.input_dim == 0 || spec.train_per_class == 0 {
        return Err(Error::config(format!("degenerate synthetic spec {spec:?}")));
    }
    if !spec.spread.is_finite() || spec.spread < 0.0 {
        return Err(Error::config(format!(
            "spread must be >= 0, got {}",
            spec.spread
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| {
            (0..spec.input_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect()
        })
        .collect();
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut draw = |per_class: usize, split: Split| -> Result<Dataset> {
        let n = per_class * spec.num_classes;
        let mut data = Vec::with_capacity(n * spec.input_dim);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let c = i % spec.num_classes;
            for &m in &means[c] {
                data.push(m + spec.spread * noise.sample(&mut rng));
            }
            labels.push(c);
        }
        Dataset::new(
            Matrix::from_vec(n, spec.input_dim, data)?,
            labels,
            spec.num_classes,
            split,
        )
    };
    let train = draw(spec.train_per_class, Split::Train)?;
    let test = draw(spec.test_per_class, Split::Test)?;
    Ok((train, test))
}

/// Reads a CSV of numeric feature columns followed by an integer label.
/// A non-numeric first row is treated as a header.
pub fn load_dataset(path: impl AsRef<Path>, split: Split) -> Result<Dataset> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&text, path, split)
}

pub(crate) fn parse_dataset(text: &str, path: &Path, split: Split) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rows: Vec<f64> = Vec::new();
    let mut labels = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 1;
        let record = record.map_err(|e| parse_err(line, e.to_string()))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let fields: Vec<&str> = record.iter().collect();
        if idx == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if fields.len() < 2 {
            return Err(parse_err(
                line,
                "need at least one feature and a label".into(),
            ));
        }
        let (feats, label) = fields.split_at(fields.len() - 1);
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(parse_err(
                    line,
                    format!("{} features, expected {w}", feats.len()),
                ));
            }
            _ => {}
        }
        for f in feats {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(line, format!("non-numeric feature {f:?}")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite feature {f:?}")));
            }
            rows.push(v);
        }
        let label = label[0];
        let y: usize = label.parse().map_err(|_| {
            Error::input(format!(
                "{}: line {line}: label {label:?} is not a non-negative integer",
                path.display()
            ))
        })?;
        labels.push(y);
    }
    let Some(width) = width else {
        return Err(Error::input(format!("{}: no data rows", path.display())));
    };
    let class_count = labels.iter().max().map_or(0, |m| m + 1);
    let ds = Dataset::new(
        Matrix::from_vec(labels.len(), width, rows)?,
        labels,
        class_count,
        split,
    )?;
    let absent = ds.absent_classes();
    if !absent.is_empty() {
        warn!("{}: classes {absent:?} have no examples", path.display());
    }
    Ok(ds)
}

pub fn write_dataset_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for (row, y) in ds.features.row_iter().zip(&ds.labels) {
        for v in row {
            out.push_str(&format!("{v},"));
        }
        out.push_str(&format!("{y}\n"));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
