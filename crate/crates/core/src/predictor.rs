//! Black-box regression predictors behind one interface.
//!
//! Three kinds are supported: built-in analytic functions (for synthetic
//! experiments and tests), a k-nearest-neighbors regressor fitted on a CSV
//! dataset, and an external process speaking the line protocol implemented
//! in [`ExternalPredictor`]. The optimizer only ever sees
//! [`PredictorHandle::predict`].

use std::path::Path;

use thiserror::Error;

mod external;
pub use external::ExternalPredictor;

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("dimension mismatch: predictor expects {expected} features, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("predictor protocol error: {0}")]
    Protocol(String),
    #[error("failed to spawn external predictor `{command}`: {source}")]
    Spawn {
        command: String,
        source: std::io::Error,
    },
    #[error("external predictor is not deterministic at query {0:?}")]
    NondeterministicPredictor(Vec<f64>),
    #[error("dataset schema error: {0}")]
    Schema(String),
    #[error("dataset parse error at row {row}, column `{col}`")]
    Parse { row: usize, col: String },
    #[error("k = {k} out of range for {n} training rows")]
    InvalidK { k: usize, n: usize },
    #[error("unknown analytic predictor `{0}`")]
    UnknownAnalytic(String),
    #[error("dataset i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Built-in analytic regression functions.
///
/// Each carries its own feature box and the extremes of its output over
/// that box, so synthetic experiments can be run without any dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyticFn {
    /// `f(x) = -(x - 0.7)^2` on `[0, 1]`.
    Quad1d,
    /// `f(x) = x` on `[0, 1000]`.
    Identity,
    /// `f(x) = x0 + 0.1 x1^2 + 5 sqrt(x2)` on `[1, 10]^3`.
    Additive,
    /// `f(x) = 0.1 x0 x1 + x2` on `[1, 10]^3`.
    Interaction,
}

impl AnalyticFn {
    pub const ALL: [AnalyticFn; 4] = [
        AnalyticFn::Quad1d,
        AnalyticFn::Identity,
        AnalyticFn::Additive,
        AnalyticFn::Interaction,
    ];

    pub fn from_name(name: &str) -> Result<Self, PredictorError> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| PredictorError::UnknownAnalytic(name.to_string()))
    }

    pub fn name(&self) -> &'static str {
        match self {
            AnalyticFn::Quad1d => "quad1d",
            AnalyticFn::Identity => "identity",
            AnalyticFn::Additive => "additive",
            AnalyticFn::Interaction => "interaction",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            AnalyticFn::Quad1d | AnalyticFn::Identity => 1,
            AnalyticFn::Additive | AnalyticFn::Interaction => 3,
        }
    }

    pub fn ranges(&self) -> Vec<(f64, f64)> {
        match self {
            AnalyticFn::Quad1d => vec![(0.0, 1.0)],
            AnalyticFn::Identity => vec![(0.0, 1000.0)],
            AnalyticFn::Additive | AnalyticFn::Interaction => vec![(1.0, 10.0); 3],
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            AnalyticFn::Quad1d => -(x[0] - 0.7) * (x[0] - 0.7),
            AnalyticFn::Identity => x[0],
            AnalyticFn::Additive => x[0] + 0.1 * x[1] * x[1] + 5.0 * x[2].sqrt(),
            AnalyticFn::Interaction => 0.1 * x[0] * x[1] + x[2],
        }
    }

    /// Output extremes over the feature box, used as the target domain for
    /// relevance construction.
    pub fn target_range(&self) -> (f64, f64) {
        match self {
            AnalyticFn::Quad1d => (-0.49, 0.0),
            AnalyticFn::Identity => (0.0, 1000.0),
            // Monotone increasing in every coordinate: extremes sit at
            // the box corners.
            AnalyticFn::Additive | AnalyticFn::Interaction => {
                (self.eval(&[1.0; 3]), self.eval(&[10.0; 3]))
            }
        }
    }
}

/// A numeric training table: features, target column, and the observed
/// per-feature ranges.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub ranges: Vec<(f64, f64)>,
}

impl Dataset {
    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }
}

/// Load a CSV dataset with a header row, treating `target_col` as the
/// regression target and every other column as a numeric feature.
///
/// Cells that fail to parse are an error; rows whose cells parse to
/// non-finite values are dropped with a warning listing the row numbers.
pub fn load_dataset(path: &Path, target_col: &str) -> Result<Dataset, PredictorError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let target_idx = headers
        .iter()
        .position(|h| h.trim() == target_col)
        .ok_or_else(|| PredictorError::Schema(format!("target column `{target_col}` not found")))?;
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target_idx)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    if feature_names.is_empty() {
        return Err(PredictorError::Schema(
            "dataset has no feature columns besides the target".into(),
        ));
    }

    let mut features = Vec::new();
    let mut target = Vec::new();
    let mut dropped = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 1;
        let mut row = Vec::with_capacity(feature_names.len());
        let mut y = 0.0;
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.trim().parse().map_err(|_| PredictorError::Parse {
                row: row_no,
                col: headers.get(j).unwrap_or("?").to_string(),
            })?;
            if j == target_idx {
                y = value;
            } else {
                row.push(value);
            }
        }
        if row.iter().any(|v| !v.is_finite()) || !y.is_finite() {
            dropped.push(row_no);
            continue;
        }
        features.push(row);
        target.push(y);
    }
    if !dropped.is_empty() {
        log::warn!("dropped {} rows with non-finite cells: {:?}", dropped.len(), dropped);
    }
    if target.len() < 2 {
        return Err(PredictorError::Schema(format!(
            "dataset needs at least 2 usable rows, got {}",
            target.len()
        )));
    }

    let d = feature_names.len();
    let ranges = (0..d)
        .map(|j| {
            features
                .iter()
                .map(|row| row[j])
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
        })
        .collect();

    Ok(Dataset {
        features,
        target,
        feature_names,
        target_name: target_col.to_string(),
        ranges,
    })
}

/// k-nearest-neighbors regressor over range-normalized features.
#[derive(Debug, Clone)]
pub struct KnnModel {
    k: usize,
    features: Vec<Vec<f64>>,
    targets: Vec<f64>,
    ranges: Vec<(f64, f64)>,
}

impl KnnModel {
    pub fn k(&self) -> usize {
        self.k
    }

    fn scaled_distance(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.ranges)
            .map(|((x, y), (lo, hi))| {
                let width = hi - lo;
                let diff = if width > 0.0 { (x - y) / width } else { x - y };
                diff * diff
            })
            .sum::<f64>()
            .sqrt()
    }

    fn predict(&self, x: &[f64]) -> f64 {
        let mut ranked: Vec<(f64, usize)> = self
            .features
            .iter()
            .enumerate()
            .map(|(i, row)| (self.scaled_distance(x, row), i))
            .collect();
        // Distance ties break toward the lower row index.
        ranked.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
        ranked[..self.k].iter().map(|&(_, i)| self.targets[i]).sum::<f64>() / self.k as f64
    }
}

/// Fit a k-NN regressor to a dataset.
pub fn fit_knn(dataset: &Dataset, k: usize) -> Result<PredictorHandle, PredictorError> {
    let n = dataset.n_rows();
    if k == 0 || k > n {
        return Err(PredictorError::InvalidK { k, n });
    }
    Ok(PredictorHandle::Knn(KnnModel {
        k,
        features: dataset.features.clone(),
        targets: dataset.target.clone(),
        ranges: dataset.ranges.clone(),
    }))
}

/// A ready-to-query predictor of any kind.
///
/// Analytic and knn handles are immutable and reentrant; an external
/// handle serializes queries over its stream pair.
#[derive(Debug)]
pub enum PredictorHandle {
    Analytic(AnalyticFn),
    Knn(KnnModel),
    External(ExternalPredictor),
}

impl PredictorHandle {
    pub fn dim(&self) -> usize {
        match self {
            PredictorHandle::Analytic(f) => f.dim(),
            PredictorHandle::Knn(m) => m.ranges.len(),
            PredictorHandle::External(e) => e.dim(),
        }
    }

    /// Short descriptor for config echoes and reports.
    pub fn label(&self) -> String {
        match self {
            PredictorHandle::Analytic(f) => format!("analytic:{}", f.name()),
            PredictorHandle::Knn(m) => format!("knn:{}", m.k),
            PredictorHandle::External(e) => format!("external:{}", e.command()),
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, PredictorError> {
        if x.len() != self.dim() {
            return Err(PredictorError::Dimension {
                expected: self.dim(),
                got: x.len(),
            });
        }
        match self {
            PredictorHandle::Analytic(f) => Ok(f.eval(x)),
            PredictorHandle::Knn(m) => Ok(m.predict(x)),
            PredictorHandle::External(e) => e.predict(x),
        }
    }

    /// Check that repeated queries at `x` return bit-identical predictions.
    ///
    /// Built-in predictors are pure functions; external ones are assumed
    /// deterministic and this is where the assumption is enforced.
    pub fn verify_determinism(&self, x: &[f64], reps: usize) -> Result<(), PredictorError> {
        let first = self.predict(x)?.to_bits();
        for _ in 1..reps {
            if self.predict(x)?.to_bits() != first {
                return Err(PredictorError::NondeterministicPredictor(x.to_vec()));
            }
        }
        Ok(())
    }
}
