//! Black-box binary classifiers with a deterministic retraining contract.
//!
//! Attribution code only sees the [`Predictor`] and [`Learner`] traits, so any
//! model that can be refit on an instance subset can be plugged in.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Dataset;
use crate::error::{FedError, Result};

/// Anything that maps a feature vector to a scalar score.
pub trait Predictor: Sync {
    fn dim(&self) -> usize;

    /// Score without a length check; callers guarantee `x.len() == dim()`.
    fn predict_unchecked(&self, x: &[f64]) -> f64;

    fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(FedError::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(self.predict_unchecked(x))
    }
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        (**self).predict_unchecked(x)
    }
}

/// Refits a model on a subset of a dataset.
pub trait Learner: Sync {
    type Model: Predictor + Send;

    fn fit(&self, data: &Dataset, subset: &[usize]) -> Result<Self::Model>;

    /// Stable identifier of the learner configuration.
    fn fingerprint(&self) -> String;
}

/// Wraps a closure as a predictor.
pub struct FnPredictor<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnPredictor<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Predictor for FnPredictor<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    KernelRbf,
    /// Raw-score linear model, no link. Only used as an analytic oracle.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub l2_strength: f64,
    /// `None` means `1 / d`.
    pub rbf_gamma: Option<f64>,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::KernelRbf,
            l2_strength: 1.0,
            rbf_gamma: None,
            max_iterations: 500,
            tolerance: 1e-8,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn logistic() -> Self {
        Self {
            kind: ModelKind::Logistic,
            ..Self::default()
        }
    }

    pub fn kernel_rbf() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.l2_strength.is_nan() || self.l2_strength < 0.0 {
            return Err(FedError::InvalidArgument("l2_strength must be >= 0".into()));
        }
        if let Some(g) = self.rbf_gamma {
            if g.is_nan() || g <= 0.0 {
                return Err(FedError::InvalidArgument("rbf_gamma must be > 0".into()));
            }
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(FedError::InvalidArgument("tolerance must be > 0".into()));
        }
        if self.max_iterations == 0 {
            return Err(FedError::InvalidArgument(
                "max_iterations must be > 0".into(),
            ));
        }
        if self.kind == ModelKind::Linear {
            return Err(FedError::InvalidArgument(
                "linear models are built with make_linear_oracle or LeastSquares".into(),
            ));
        }
        Ok(())
    }

    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))[..16].to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Linear {
        weights: Vec<f64>,
        bias: f64,
    },
    Kernel {
        gamma: f64,
        bias: f64,
        alpha: Vec<f64>,
        /// Training rows, row-major.
        support: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    config: ModelConfig,
    dim: usize,
    params: Params,
    fingerprint: String,
}

/// On-disk form of a [`TrainedModel`].
///
/// `parameters` layout: linear and logistic `[bias, w_0..w_{d-1}]`;
/// kernel `[bias, alpha_0..alpha_{n-1}, row_0.., row_{n-1}..]` with
/// `n = (len - 1) / (d + 1)` and gamma taken from `config.rbf_gamma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub dim: usize,
    pub parameters: Vec<f64>,
    pub fingerprint: String,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn rbf(gamma: f64, a: &[f64], b: &[f64]) -> f64 {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * sq).exp()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn data_fingerprint(config: &ModelConfig, data: &Dataset, subset: &[usize]) -> String {
    let mut h = Sha256::new();
    h.update(
        serde_json::to_string(config)
            .expect("config serializes")
            .as_bytes(),
    );
    for &i in subset {
        for v in data.row(i) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.update([data.label(i)]);
    }
    hex(&h.finalize())[..16].to_string()
}

fn check_subset(data: &Dataset, subset: &[usize]) -> Result<()> {
    if subset.is_empty() {
        return Err(FedError::EmptySubset);
    }
    if let Some(&i) = subset.iter().find(|&&i| i >= data.n()) {
        return Err(FedError::IndexOutOfRange {
            index: i,
            size: data.n(),
        });
    }
    let positives = subset.iter().filter(|&&i| data.label(i) == 1).count();
    if positives == 0 || positives == subset.len() {
        return Err(FedError::OneClass);
    }
    Ok(())
}

/// Trains on `subset` of `data`. Pure in `(data[subset], config)`.
pub fn train(data: &Dataset, subset: &[usize], config: &ModelConfig) -> Result<TrainedModel> {
    config.validate()?;
    check_subset(data, subset)?;
    let d = data.d();
    let mut config = config.clone();
    let params = match config.kind {
        ModelKind::Logistic => fit_logistic(data, subset, &config),
        ModelKind::KernelRbf => {
            let gamma = config.rbf_gamma.unwrap_or(1.0 / d.max(1) as f64);
            config.rbf_gamma = Some(gamma);
            fit_kernel(data, subset, gamma, config.l2_strength)?
        }
        ModelKind::Linear => unreachable!("rejected by validate"),
    };
    Ok(TrainedModel {
        fingerprint: data_fingerprint(&config, data, subset),
        config,
        dim: d,
        params,
    })
}

fn fit_logistic(data: &Dataset, subset: &[usize], config: &ModelConfig) -> Params {
    let d = data.d();
    let n = subset.len() as f64;
    let lambda = config.l2_strength / n;
    // 1/L for the logistic loss with features in a bounded box.
    let max_sq = subset
        .iter()
        .map(|&i| dot(data.row(i), data.row(i)) + 1.0)
        .fold(0.0, f64::max);
    let step = 1.0 / (0.25 * max_sq + lambda);
    let mut w = vec![0.0; d];
    let mut b = 0.0;
    let mut gw = vec![0.0; d];
    for _ in 0..config.max_iterations {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gb = 0.0;
        for &i in subset {
            let x = data.row(i);
            let r = sigmoid(dot(&w, x) + b) - data.label(i) as f64;
            for (g, xv) in gw.iter_mut().zip(x) {
                *g += r * xv;
            }
            gb += r;
        }
        let mut norm_sq = 0.0;
        for (g, wv) in gw.iter_mut().zip(&w) {
            *g = *g / n + lambda * wv;
            norm_sq += *g * *g;
        }
        gb /= n;
        norm_sq += gb * gb;
        if norm_sq.sqrt() < config.tolerance {
            break;
        }
        for (wv, g) in w.iter_mut().zip(&gw) {
            *wv -= step * g;
        }
        b -= step * gb;
    }
    Params::Linear {
        weights: w,
        bias: b,
    }
}

fn fit_kernel(data: &Dataset, subset: &[usize], gamma: f64, l2: f64) -> Result<Params> {
    let n = subset.len();
    let mut support = Vec::with_capacity(n * data.d());
    for &i in subset {
        support.extend_from_slice(data.row(i));
    }
    let targets: Vec<f64> = subset
        .iter()
        .map(|&i| 2.0 * data.label(i) as f64 - 1.0)
        .collect();
    let bias = targets.iter().sum::<f64>() / n as f64;
    let gram = DMatrix::from_fn(n, n, |r, c| {
        let k = rbf(gamma, data.row(subset[r]), data.row(subset[c]));
        if r == c {
            k + l2
        } else {
            k
        }
    });
    let rhs = DVector::from_iterator(n, targets.iter().map(|t| t - bias));
    let chol = gram.cholesky().ok_or_else(|| {
        FedError::Numeric("kernel system is not positive definite; raise l2_strength".into())
    })?;
    let alpha = chol.solve(&rhs);
    if alpha.iter().any(|a| !a.is_finite()) {
        return Err(FedError::Numeric(
            "kernel solve produced non-finite weights".into(),
        ));
    }
    Ok(Params::Kernel {
        gamma,
        bias,
        alpha: alpha.iter().copied().collect(),
        support,
    })
}

/// Raw-score linear model `bias + weights . x`.
pub fn make_linear_oracle(weights: Vec<f64>, bias: f64) -> TrainedModel {
    let config = ModelConfig {
        kind: ModelKind::Linear,
        ..ModelConfig::default()
    };
    let mut h = Sha256::new();
    for v in weights.iter().chain(std::iter::once(&bias)) {
        h.update(v.to_bits().to_le_bytes());
    }
    TrainedModel {
        fingerprint: hex(&h.finalize())[..16].to_string(),
        config,
        dim: weights.len(),
        params: Params::Linear { weights, bias },
    }
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Probability of the positive class (raw score for linear oracles).
    pub fn predict_proba(&self, x: &[f64]) -> Result<f64> {
        self.predict(x)
    }

    /// Score before the logistic link.
    pub fn decision(&self, x: &[f64]) -> f64 {
        match &self.params {
            Params::Linear { weights, bias } => bias + dot(weights, x),
            Params::Kernel {
                gamma,
                bias,
                alpha,
                support,
            } => {
                let d = self.dim;
                let mut s = *bias;
                for (a, row) in alpha.iter().zip(support.chunks_exact(d.max(1))) {
                    s += a * rbf(*gamma, row, x);
                }
                s
            }
        }
    }

    pub fn to_artifact(&self) -> ModelArtifact {
        let parameters = match &self.params {
            Params::Linear { weights, bias } => std::iter::once(*bias)
                .chain(weights.iter().copied())
                .collect(),
            Params::Kernel {
                bias,
                alpha,
                support,
                ..
            } => std::iter::once(*bias)
                .chain(alpha.iter().copied())
                .chain(support.iter().copied())
                .collect(),
        };
        ModelArtifact {
            kind: self.config.kind,
            config: self.config.clone(),
            dim: self.dim,
            parameters,
            fingerprint: self.fingerprint.clone(),
        }
    }

    pub fn from_artifact(a: ModelArtifact) -> Result<Self> {
        let bad = |msg: &str| FedError::InvalidArgument(format!("model artifact: {msg}"));
        if a.parameters.is_empty() {
            return Err(bad("empty parameter block"));
        }
        if a.kind != a.config.kind {
            return Err(bad("kind disagrees with config"));
        }
        let bias = a.parameters[0];
        let rest = &a.parameters[1..];
        let params = match a.kind {
            ModelKind::Linear | ModelKind::Logistic => {
                if rest.len() != a.dim {
                    return Err(bad("weight count differs from dim"));
                }
                Params::Linear {
                    weights: rest.to_vec(),
                    bias,
                }
            }
            ModelKind::KernelRbf => {
                let gamma = a.config.rbf_gamma.ok_or_else(|| bad("missing rbf_gamma"))?;
                if !rest.len().is_multiple_of(a.dim + 1) {
                    return Err(bad("kernel block length"));
                }
                let n = rest.len() / (a.dim + 1);
                Params::Kernel {
                    gamma,
                    bias,
                    alpha: rest[..n].to_vec(),
                    support: rest[n..].to_vec(),
                }
            }
        };
        Ok(TrainedModel {
            config: a.config,
            dim: a.dim,
            params,
            fingerprint: a.fingerprint,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_artifact())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_artifact(serde_json::from_str(s)?)
    }
}

impl Predictor for TrainedModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict_unchecked(&self, x: &[f64]) -> f64 {
        let z = self.decision(x);
        match self.config.kind {
            ModelKind::Linear => z,
            ModelKind::Logistic | ModelKind::KernelRbf => sigmoid(z),
        }
    }
}

impl Learner for ModelConfig {
    type Model = TrainedModel;

    fn fit(&self, data: &Dataset, subset: &[usize]) -> Result<TrainedModel> {
        train(data, subset, self)
    }

    fn fingerprint(&self) -> String {
        ModelConfig::fingerprint(self)
    }
}

/// Ordinary least squares on the 0/1 labels, returning a linear oracle.
/// Rank-deficient systems get the minimum-norm solution.
#[derive(Debug, Clone, Copy, Default)]
pub struct LeastSquares;

impl Learner for LeastSquares {
    type Model = TrainedModel;

    fn fit(&self, data: &Dataset, subset: &[usize]) -> Result<TrainedModel> {
        if subset.is_empty() {
            return Err(FedError::EmptySubset);
        }
        let d = data.d();
        let design = DMatrix::from_fn(subset.len(), d + 1, |r, c| {
            if c == d {
                1.0
            } else {
                data.row(subset[r])[c]
            }
        });
        let y = DVector::from_iterator(subset.len(), subset.iter().map(|&i| data.label(i) as f64));
        let coef = design
            .svd(true, true)
            .solve(&y, 1e-12)
            .map_err(|e| FedError::Numeric(e.to_string()))?;
        Ok(make_linear_oracle(
            coef.rows(0, d).iter().copied().collect(),
            coef[d],
        ))
    }

    fn fingerprint(&self) -> String {
        "least-squares".into()
    }
}

/// Fraction of `subset` where `predict >= 0.5` matches the label.
pub fn accuracy(model: &impl Predictor, data: &Dataset, subset: &[usize]) -> Result<f64> {
    if subset.is_empty() {
        return Err(FedError::EmptySubset);
    }
    let mut hits = 0usize;
    for &i in subset {
        let p = model.predict(data.row(i))?;
        if u8::from(p >= 0.5) == data.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / subset.len() as f64)
}
