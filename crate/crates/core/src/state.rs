//! Learnable state, hyperparameters and the fit trace.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateError {
    #[error("invalid hyperparameter: {0}")]
    HyperParam(String),
    #[error("state dimension mismatch: {0}")]
    Dimension(String),
    #[error("state contains non-finite values")]
    NonFinite,
    #[error("cluster label {label} of object {object} is outside [0, {k})")]
    LabelOutOfRange { object: usize, label: usize, k: usize },
}

/// Everything the optimizer learns: sender/receiver factors, block matrix,
/// hard cluster labels, covariate coefficients and a global bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState<T> {
    /// n × d sender factors.
    pub u: Matrix<T>,
    /// n × d receiver factors.
    pub v: Matrix<T>,
    /// K × K block interaction matrix.
    pub c: Matrix<T>,
    /// Cluster label of each object, in `[0, K)`.
    pub z: Vec<usize>,
    pub beta: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> LatentState<T> {
    /// All-zero state with every object in cluster 0.
    pub fn zeros(n: usize, d: usize, k: usize, m: usize) -> Self {
        Self {
            u: Matrix::zeros(n, d),
            v: Matrix::zeros(n, d),
            c: Matrix::zeros(k, k),
            z: vec![0; n],
            beta: vec![T::zero(); m],
            bias: T::zero(),
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.u.rows()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.u.cols()
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.c.rows()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.beta.len()
    }

    /// One-hot row z_i derived from the label.
    pub fn one_hot(&self, i: usize) -> Vec<T> {
        let mut row = vec![T::zero(); self.k()];
        row[self.z[i]] = T::one();
        row
    }

    /// Checks shape consistency, label range and finiteness.
    pub fn check(&self) -> Result<(), StateError> {
        let (n, d, k) = (self.n(), self.d(), self.k());
        if self.v.rows() != n || self.v.cols() != d {
            return Err(StateError::Dimension(format!(
                "V is {}x{}, expected {n}x{d}",
                self.v.rows(),
                self.v.cols()
            )));
        }
        if self.c.cols() != k {
            return Err(StateError::Dimension(format!("C is {}x{}, expected square", k, self.c.cols())));
        }
        if self.z.len() != n {
            return Err(StateError::Dimension(format!("z has length {}, expected {n}", self.z.len())));
        }
        if let Some((object, &label)) = self.z.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(StateError::LabelOutOfRange { object, label, k });
        }
        let finite = self.u.is_finite()
            && self.v.is_finite()
            && self.c.is_finite()
            && self.beta.iter().all(|x| x.is_finite())
            && self.bias.is_finite();
        if !finite {
            return Err(StateError::NonFinite);
        }
        Ok(())
    }
}

/// Model and optimizer hyperparameters.
///
/// Each `lambda_*` multiplies its quadratic penalty directly:
/// the objective subtracts `lambda_u / 2 · ‖U‖²` and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct HyperParams<T> {
    pub d: usize,
    pub k: usize,
    pub lambda_u: T,
    pub lambda_v: T,
    pub lambda_c: T,
    pub lambda_beta: T,
    /// Initial Armijo trial step, in (0, 1].
    pub eta0: T,
    pub armijo_shrink: T,
    pub armijo_slope: T,
    pub max_sweeps: usize,
    pub rel_tol: T,
    pub seed: u64,
}

impl<T: Scalar> Default for HyperParams<T> {
    fn default() -> Self {
        Self {
            d: 2,
            k: 3,
            lambda_u: T::one(),
            lambda_v: T::one(),
            lambda_c: T::one(),
            lambda_beta: T::one(),
            eta0: T::one(),
            armijo_shrink: T::half(),
            armijo_slope: T::lit(0.01),
            max_sweeps: 200,
            rel_tol: T::lit(1e-7),
            seed: 0,
        }
    }
}

impl<T: Scalar> HyperParams<T> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn check(&self) -> Result<(), StateError> {
        let bad = |msg: &str| Err(StateError::HyperParam(msg.to_string()));
        if self.d == 0 {
            return bad("d must be at least 1");
        }
        if self.k == 0 {
            return bad("K must be at least 1");
        }
        for (name, lambda) in [
            ("lambda_u", self.lambda_u),
            ("lambda_v", self.lambda_v),
            ("lambda_c", self.lambda_c),
            ("lambda_beta", self.lambda_beta),
        ] {
            if !(lambda >= T::zero()) || !lambda.is_finite() {
                return bad(&format!("{name} must be a finite value >= 0"));
            }
        }
        if !(self.eta0 > T::zero() && self.eta0 <= T::one()) {
            return bad("eta0 must lie in (0, 1]");
        }
        if !(self.armijo_shrink > T::zero() && self.armijo_shrink < T::one()) {
            return bad("armijo_shrink must lie in (0, 1)");
        }
        if !(self.armijo_slope > T::zero() && self.armijo_slope < T::one()) {
            return bad("armijo_slope must lie in (0, 1)");
        }
        if !(self.rel_tol > T::zero()) {
            return bad("rel_tol must be positive");
        }
        Ok(())
    }
}

/// Non-fatal events recorded during a fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FitWarning {
    pub sweep: usize,
    pub block: String,
    pub message: String,
}

/// Per-sweep record of a fit.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTrace<T> {
    /// Objective before the first sweep, then after every sweep.
    pub objective_per_sweep: Vec<T>,
    /// Accepted Armijo step of every block update, in execution order (0 = skipped).
    pub eta_per_update: Vec<T>,
    /// Number of label changes in each sweep.
    pub reassignment_counts: Vec<usize>,
    pub warnings: Vec<FitWarning>,
}

impl<T: Scalar> FitTrace<T> {
    /// First sweep index `t` with `L[t+1] < L[t] - tol`.
    pub fn first_violation(&self, tol: T) -> Option<usize> {
        self.objective_per_sweep.windows(2).position(|w| w[1] < w[0] - tol)
    }

    pub fn is_monotone(&self, tol: T) -> bool {
        self.first_violation(tol).is_none()
    }

    pub fn final_objective(&self) -> Option<T> {
        self.objective_per_sweep.last().copied()
    }

    /// Number of completed sweeps.
    pub fn sweeps(&self) -> usize {
        self.objective_per_sweep.len().saturating_sub(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_hyperparams_are_valid() {
        assert!(HyperParams::<f64>::default().check().is_ok());
        assert!(HyperParams::<f32>::default().check().is_ok());
    }

    #[test]
    fn hyperparam_bounds_are_enforced() {
        let hp = HyperParams::<f64> { eta0: 0.0, ..Default::default() };
        assert!(hp.check().is_err());
        let hp = HyperParams::<f64> { eta0: 1.5, ..Default::default() };
        assert!(hp.check().is_err());
        let hp = HyperParams::<f64> { lambda_c: -1.0, ..Default::default() };
        assert!(hp.check().is_err());
        let hp = HyperParams::<f64> { k: 0, ..Default::default() };
        assert!(hp.check().is_err());
    }

    #[test]
    fn one_hot_has_single_one() {
        let mut s = LatentState::<f64>::zeros(3, 2, 4, 0);
        s.z = vec![0, 3, 2];
        for i in 0..3 {
            let row = s.one_hot(i);
            assert_eq!(row.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(row[s.z[i]], 1.0);
        }
    }

    #[test]
    fn check_catches_bad_labels_and_nan() {
        let mut s = LatentState::<f64>::zeros(2, 1, 2, 0);
        s.z[1] = 2;
        assert!(matches!(s.check(), Err(StateError::LabelOutOfRange { object: 1, .. })));
        s.z[1] = 1;
        s.bias = f64::NAN;
        assert_eq!(s.check(), Err(StateError::NonFinite));
    }

    #[test]
    fn trace_detects_decrease() {
        let t = FitTrace { objective_per_sweep: vec![-3.0, -2.0, -2.5], ..Default::default() };
        assert_eq!(t.first_violation(1e-8), Some(1));
        assert!(!t.is_monotone(1e-8));
    }
}
