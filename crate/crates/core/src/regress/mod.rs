//! Estimators on fused feature blocks and the evaluation metrics.

mod forest;
mod mlp;
mod ols;

use std::fmt::{self, Write as _};
use std::str::FromStr;

pub use forest::{fit_random_forest, ForestModel, Tree};
pub use mlp::{fit_mlp, MlpModel, MlpNet, MlpOptions};
pub use ols::{fit_ols, LinearModel};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::geo::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Linear,
    RandomForest,
    Mlp,
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "ols" => Ok(Self::Linear),
            "rf" | "random_forest" | "random-forest" => Ok(Self::RandomForest),
            "mlp" => Ok(Self::Mlp),
            _ => Err(Error::Config(format!("unknown estimator {s:?} (linear, rf, mlp)"))),
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Linear => "linear",
            Self::RandomForest => "rf",
            Self::Mlp => "mlp",
        })
    }
}

pub const DEFAULT_RF_TREES: usize = 40;
pub const DEFAULT_MLP_HIDDEN: (usize, usize) = (500, 100);
pub const DEFAULT_RUNS: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub kind: EstimatorKind,
    pub rf_trees: usize,
    /// Draw a bootstrap sample per tree; without it every tree sees all rows.
    pub rf_bootstrap: bool,
    pub mlp_hidden: (usize, usize),
    pub mlp: MlpOptions,
    pub seed: u64,
}

impl EstimatorSpec {
    pub fn new(kind: EstimatorKind, seed: u64) -> Self {
        Self {
            kind,
            rf_trees: DEFAULT_RF_TREES,
            rf_bootstrap: true,
            mlp_hidden: DEFAULT_MLP_HIDDEN,
            mlp: MlpOptions::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rf_trees == 0 {
            return Err(Error::Config("rf_trees must be at least 1".into()));
        }
        if self.mlp_hidden.0 == 0 || self.mlp_hidden.1 == 0 {
            return Err(Error::Config("MLP hidden widths must be at least 1".into()));
        }
        self.mlp.validate()
    }
}

/// A fitted estimator of any kind.
#[derive(Debug, Clone)]
pub enum Model {
    Linear(LinearModel),
    Forest(ForestModel),
    Mlp(MlpModel),
}

impl Model {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        match self {
            Model::Linear(m) => m.predict(x),
            Model::Forest(m) => m.predict(x),
            Model::Mlp(m) => m.predict(x),
        }
    }
}

pub fn fit(x: &FeatureMatrix, y: &[f64], spec: &EstimatorSpec) -> Result<Model> {
    spec.validate()?;
    Ok(match spec.kind {
        EstimatorKind::Linear => Model::Linear(fit_ols(x, y)?),
        EstimatorKind::RandomForest => Model::Forest(fit_random_forest(x, y, spec)?),
        EstimatorKind::Mlp => Model::Mlp(fit_mlp(x, y, spec)?),
    })
}

fn check_pair(y: &[f64], yhat: &[f64], min_len: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::invalid(format!("length mismatch: {} truths, {} predictions", y.len(), yhat.len())));
    }
    if y.len() < min_len {
        return Err(Error::invalid(format!("need at least {min_len} values, got {}", y.len())));
    }
    Ok(())
}

/// Root mean squared error.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 1)?;
    let sse: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_pair(y, yhat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::invalid("R² undefined: true values are constant"));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean and spread of the metrics over repeated fits. Standard deviations
/// are population (divide by `n_runs`).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
    pub n_runs: usize,
    pub rmse_runs: Vec<f64>,
    pub r2_runs: Vec<f64>,
}

/// Mean taken as an offset from the first value so identical runs give
/// exactly zero spread.
fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v[0] + v.iter().map(|x| x - v[0]).sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

impl EvalReport {
    pub fn from_runs(rmse_runs: Vec<f64>, r2_runs: Vec<f64>) -> Result<Self> {
        if rmse_runs.is_empty() || rmse_runs.len() != r2_runs.len() {
            return Err(Error::invalid("report needs at least one run and matching metric lists"));
        }
        let (rmse_mean, rmse_std) = mean_std(&rmse_runs);
        let (r2_mean, r2_std) = mean_std(&r2_runs);
        Ok(Self { rmse_mean, rmse_std, r2_mean, r2_std, n_runs: rmse_runs.len(), rmse_runs, r2_runs })
    }

    pub fn to_table(&self) -> String {
        let mut s = format!("{:<6} {:>16} {:>16} {:>6}\n", "metric", "mean", "std", "runs");
        let _ = writeln!(s, "{:<6} {:>16.4} {:>16.4} {:>6}", "rmse", self.rmse_mean, self.rmse_std, self.n_runs);
        let _ = writeln!(s, "{:<6} {:>16.6} {:>16.6} {:>6}", "r2", self.r2_mean, self.r2_std, self.n_runs);
        s
    }

    pub fn to_csv(&self) -> String {
        format!(
            "metric,mean,std,n_runs\nrmse,{},{},{}\nr2,{},{},{}\n",
            self.rmse_mean, self.rmse_std, self.n_runs, self.r2_mean, self.r2_std, self.n_runs
        )
    }
}

/// Fits `n_runs` instances with seeds `derive_seed(spec.seed, run)` and
/// scores each on the test rows. The linear estimator is deterministic and
/// is fitted once.
pub fn repeated_eval(
    x_train: &FeatureMatrix,
    y_train: &[f64],
    x_test: &FeatureMatrix,
    y_test: &[f64],
    spec: &EstimatorSpec,
    n_runs: usize,
) -> Result<EvalReport> {
    if n_runs == 0 {
        return Err(Error::Config("n_runs must be at least 1".into()));
    }
    let mut rmses = Vec::with_capacity(n_runs);
    let mut r2s = Vec::with_capacity(n_runs);
    if spec.kind == EstimatorKind::Linear {
        let pred = fit(x_train, y_train, spec)?.predict(x_test)?;
        let (a, b) = (rmse(y_test, &pred)?, r2(y_test, &pred)?);
        rmses.resize(n_runs, a);
        r2s.resize(n_runs, b);
    } else {
        for run in 0..n_runs {
            let run_spec = EstimatorSpec { seed: derive_seed(spec.seed, run as u64), ..spec.clone() };
            let pred = fit(x_train, y_train, &run_spec)?.predict(x_test)?;
            rmses.push(rmse(y_test, &pred)?);
            r2s.push(r2(y_test, &pred)?);
        }
    }
    EvalReport::from_runs(rmses, r2s)
}
