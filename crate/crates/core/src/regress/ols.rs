use faer::Mat;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::least_squares;

/// Ordinary least squares with an intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Column names, `intercept` first.
    pub names: Vec<String>,
    pub coef: Vec<f64>,
}

pub fn fit_ols(x: &FeatureMatrix, y: &[f64]) -> Result<LinearModel> {
    if y.len() != x.n() {
        return Err(Error::invalid(format!("{} responses for {} rows", y.len(), x.n())));
    }
    let design = x.to_design()?;
    let rhs = Mat::from_fn(y.len(), 1, |i, _| y[i]);
    let beta = least_squares(&design.to_mat(), &rhs, design.names())?;
    Ok(LinearModel { names: design.names().to_vec(), coef: (0..design.k()).map(|j| beta[(j, 0)]).collect() })
}

impl LinearModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        if x.k() + 1 != self.coef.len() {
            return Err(Error::invalid(format!("model has {} features, input has {}", self.coef.len() - 1, x.k())));
        }
        Ok((0..x.n())
            .map(|i| self.coef[0] + x.row(i).iter().zip(&self.coef[1..]).map(|(a, b)| a * b).sum::<f64>())
            .collect())
    }
}
