//! Logit, log-posterior objective and the per-block derivative machinery.
//!
//! Every learnable block other than the cluster labels enters the logit
//! linearly: `H_ij = w_ijᵀ Ω + rest`, where the feature `w_ij` is `v_j` for a
//! sender row, `u_i` for a receiver row, `z_i ⊗ z_j` for the flattened block
//! matrix, `x_ij` for the covariate weights and `1` for the bias. Gradients,
//! Hessians and curvature bounds are all sums over the observed entries that
//! touch the block, weighted by that feature.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Entry, RelationData, SideInfo};
use crate::linalg::Matrix;
use crate::scalar::{dot, squared_norm, Scalar};
use crate::state::{HyperParams, LatentState, StateError};

/// Probability clamp used when reporting log-likelihoods of held-out pairs.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("non-finite input to logistic terms")]
    NonFinite,
    #[error("pair ({i}, {j}) out of range for n = {n}")]
    IndexOutOfRange { i: usize, j: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("curvature of block {0} is singular")]
    SingularCurvature(FactorSelector),
    #[error("vector is not one-hot")]
    NotOneHot,
    #[error(transparent)]
    State(#[from] StateError),
}

/// The free block in one alternating update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FactorSelector {
    /// Sender factor `u_i`.
    URow(usize),
    /// Receiver factor `v_j`.
    VRow(usize),
    /// Block matrix flattened row-major, `C[k][l]` at `k·K + l`.
    CFlat,
    Beta,
    Bias,
}

impl std::fmt::Display for FactorSelector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FactorSelector::URow(i) => write!(f, "U[{i}]"),
            FactorSelector::VRow(j) => write!(f, "V[{j}]"),
            FactorSelector::CFlat => f.write_str("C"),
            FactorSelector::Beta => f.write_str("beta"),
            FactorSelector::Bias => f.write_str("bias"),
        }
    }
}

/// Logistic function without overflow.
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    let s = if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    };
    // Keep strictly inside (0, 1).
    s.max(T::min_positive_value()).min(T::one() - T::epsilon() / (T::one() + T::one()))
}

/// Logistic log-partition `log(1 + e^x)` without overflow.
#[inline]
pub fn llp<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `(σ(x), log(1 + e^x))`.
pub fn stable_logit_terms<T: Scalar>(x: T) -> Result<(T, T), ModelError> {
    if !x.is_finite() {
        return Err(ModelError::NonFinite);
    }
    Ok((sigmoid(x), llp(x)))
}

/// Bernoulli log-probability `s·h − llp(h)` of one observation.
#[inline]
pub fn log_lik_term<T: Scalar>(s: bool, h: T) -> T {
    let sh = if s { h } else { T::zero() };
    sh - llp(h)
}

/// Clamped Bernoulli log-probability used for held-out reporting.
pub fn clamped_log_prob<T: Scalar>(s: bool, h: T) -> T {
    let eps = T::lit(PROB_CLAMP);
    let p = sigmoid(h).max(eps).min(T::one() - eps);
    if s {
        p.ln()
    } else {
        (T::one() - p).ln()
    }
}

#[inline]
pub(crate) fn logit_unchecked<T: Scalar>(
    state: &LatentState<T>,
    i: usize,
    j: usize,
    side: Option<&SideInfo<T>>,
) -> T {
    let mut h = dot(state.u.row(i), state.v.row(j)) + state.c[(state.z[i], state.z[j])] + state.bias;
    if let Some(side) = side {
        h += dot(&state.beta, side.get(i, j));
    }
    h
}

/// `H_ij = β·x_ij + u_i·v_j + C[z_i, z_j] + ε`; the covariate term is 0 without side info.
pub fn logit<T: Scalar>(
    state: &LatentState<T>,
    i: usize,
    j: usize,
    side: Option<&SideInfo<T>>,
) -> Result<T, ModelError> {
    let n = state.n();
    if i >= n || j >= n {
        return Err(ModelError::IndexOutOfRange { i, j, n });
    }
    if let Some(side) = side {
        if side.dim() != state.m() {
            return Err(ModelError::Dimension(format!(
                "side info has dimension {}, beta has length {}",
                side.dim(),
                state.m()
            )));
        }
    }
    Ok(logit_unchecked(state, i, j, side))
}

pub(crate) fn check_inputs<T: Scalar>(
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<(), ModelError> {
    state.check()?;
    if state.n() != data.n() {
        return Err(ModelError::Dimension(format!(
            "state has {} objects, data has {}",
            state.n(),
            data.n()
        )));
    }
    if hp.d != state.d() || hp.k != state.k() {
        return Err(ModelError::Dimension(format!(
            "hyperparameters (d={}, K={}) do not match state (d={}, K={})",
            hp.d,
            hp.k,
            state.d(),
            state.k()
        )));
    }
    if let Some(side) = side {
        if side.dim() != state.m() {
            return Err(ModelError::Dimension(format!(
                "side info has dimension {}, beta has length {}",
                side.dim(),
                state.m()
            )));
        }
    }
    Ok(())
}

/// Data term `Σ_W (S·H − llp(H))` over all observed entries.
pub fn data_log_likelihood<T: Scalar>(
    state: &LatentState<T>,
    data: &RelationData,
    side: Option<&SideInfo<T>>,
) -> T {
    data.entries()
        .iter()
        .map(|e| log_lik_term(e.s, logit_unchecked(state, e.i, e.j, side)))
        .sum()
}

/// Sum of the quadratic prior penalties.
pub fn prior_penalty<T: Scalar>(state: &LatentState<T>, hp: &HyperParams<T>) -> T {
    T::half()
        * (hp.lambda_u * state.u.frobenius_sq()
            + hp.lambda_v * state.v.frobenius_sq()
            + hp.lambda_c * state.c.frobenius_sq()
            + hp.lambda_beta * squared_norm(&state.beta))
}

/// MAP objective with the parameter-independent constant dropped.
pub fn log_posterior<T: Scalar>(
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<T, ModelError> {
    check_inputs(state, data, hp, side)?;
    Ok(data_log_likelihood(state, data, side) - prior_penalty(state, hp))
}

pub(crate) fn check_selector<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
) -> Result<(), ModelError> {
    match which {
        FactorSelector::URow(i) | FactorSelector::VRow(i) if i >= state.n() => Err(
            ModelError::Dimension(format!("{which} selects a row outside [0, {})", state.n())),
        ),
        _ => Ok(()),
    }
}

/// Length of the flattened block.
pub fn block_dim<T: Scalar>(which: FactorSelector, state: &LatentState<T>) -> usize {
    match which {
        FactorSelector::URow(_) | FactorSelector::VRow(_) => state.d(),
        FactorSelector::CFlat => state.k() * state.k(),
        FactorSelector::Beta => state.m(),
        FactorSelector::Bias => 1,
    }
}

/// Current values of the block.
pub fn block_values<T: Scalar>(which: FactorSelector, state: &LatentState<T>) -> Vec<T> {
    match which {
        FactorSelector::URow(i) => state.u.row(i).to_vec(),
        FactorSelector::VRow(j) => state.v.row(j).to_vec(),
        FactorSelector::CFlat => state.c.as_slice().to_vec(),
        FactorSelector::Beta => state.beta.clone(),
        FactorSelector::Bias => vec![state.bias],
    }
}

/// Overwrites the block with `values`.
pub fn set_block<T: Scalar>(which: FactorSelector, state: &mut LatentState<T>, values: &[T]) {
    assert_eq!(values.len(), block_dim(which, state), "block length mismatch for {which}");
    match which {
        FactorSelector::URow(i) => state.u.row_mut(i).copy_from_slice(values),
        FactorSelector::VRow(j) => state.v.row_mut(j).copy_from_slice(values),
        FactorSelector::CFlat => state.c.as_mut_slice().copy_from_slice(values),
        FactorSelector::Beta => state.beta.copy_from_slice(values),
        FactorSelector::Bias => state.bias = values[0],
    }
}

/// Prior weight on the block.
pub fn block_lambda<T: Scalar>(which: FactorSelector, hp: &HyperParams<T>) -> T {
    match which {
        FactorSelector::URow(_) => hp.lambda_u,
        FactorSelector::VRow(_) => hp.lambda_v,
        FactorSelector::CFlat => hp.lambda_c,
        FactorSelector::Beta => hp.lambda_beta,
        FactorSelector::Bias => T::zero(),
    }
}

/// How an observed entry's logit depends on the block.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Feature<'a, T> {
    Dense(&'a [T]),
    OneHot(usize),
    Unit,
}

impl<T: Scalar> Feature<'_, T> {
    #[inline]
    pub(crate) fn dot(&self, x: &[T]) -> T {
        match *self {
            Feature::Dense(w) => dot(w, x),
            Feature::OneHot(k) => x[k],
            Feature::Unit => x[0],
        }
    }

    #[inline]
    fn add_scaled_to(&self, alpha: T, out: &mut [T]) {
        match *self {
            Feature::Dense(w) => out.iter_mut().zip(w).for_each(|(o, &x)| *o += alpha * x),
            Feature::OneHot(k) => out[k] += alpha,
            Feature::Unit => out[0] += alpha,
        }
    }

    #[inline]
    fn add_outer_to(&self, alpha: T, out: &mut Matrix<T>) {
        match *self {
            Feature::Dense(w) => out.add_outer(alpha, w),
            Feature::OneHot(k) => out[(k, k)] += alpha,
            Feature::Unit => out[(0, 0)] += alpha,
        }
    }
}

/// Visits every observed entry whose logit depends on the block, passing the
/// entry, its current logit and its feature vector.
pub(crate) fn for_each_block_entry<'a, T: Scalar>(
    which: FactorSelector,
    state: &'a LatentState<T>,
    data: &RelationData,
    side: Option<&'a SideInfo<T>>,
    mut f: impl FnMut(&Entry, T, Feature<'a, T>),
) {
    let entries = data.entries();
    let k = state.k();
    match which {
        FactorSelector::URow(i) => {
            for e in &entries[data.out_range(i)] {
                f(e, logit_unchecked(state, e.i, e.j, side), Feature::Dense(state.v.row(e.j)));
            }
        }
        FactorSelector::VRow(j) => {
            for &idx in data.in_indices(j) {
                let e = &entries[idx];
                f(e, logit_unchecked(state, e.i, e.j, side), Feature::Dense(state.u.row(e.i)));
            }
        }
        FactorSelector::CFlat => {
            for e in entries {
                let flat = state.z[e.i] * k + state.z[e.j];
                f(e, logit_unchecked(state, e.i, e.j, side), Feature::OneHot(flat));
            }
        }
        FactorSelector::Beta => {
            // Without side information the covariate term is identically zero.
            if let Some(side) = side {
                for e in entries {
                    f(e, logit_unchecked(state, e.i, e.j, Some(side)), Feature::Dense(side.get(e.i, e.j)));
                }
            }
        }
        FactorSelector::Bias => {
            for e in entries {
                f(e, logit_unchecked(state, e.i, e.j, side), Feature::Unit);
            }
        }
    }
}

/// The part of the objective that depends on the block; differs from
/// [`log_posterior`] by a constant while every other block is held fixed.
pub fn block_objective<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<T, ModelError> {
    check_inputs(state, data, hp, side)?;
    check_selector(which, state)?;
    match which {
        FactorSelector::URow(_) | FactorSelector::VRow(_) => {
            let mut acc = T::zero();
            for_each_block_entry(which, state, data, side, |e, h, _| acc += log_lik_term(e.s, h));
            let omega = block_values(which, state);
            Ok(acc - T::half() * block_lambda(which, hp) * squared_norm(&omega))
        }
        _ => log_posterior(state, data, hp, side),
    }
}

/// Gradient of the objective with respect to the block.
pub fn gradient<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<Vec<T>, ModelError> {
    check_inputs(state, data, hp, side)?;
    check_selector(which, state)?;
    Ok(gradient_unchecked(which, state, data, hp, side))
}

pub(crate) fn gradient_unchecked<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Vec<T> {
    let lambda = block_lambda(which, hp);
    let mut grad: Vec<T> = block_values(which, state).into_iter().map(|x| -lambda * x).collect();
    for_each_block_entry(which, state, data, side, |e, h, w| {
        let s = if e.s { T::one() } else { T::zero() };
        w.add_scaled_to(s - sigmoid(h), &mut grad);
    });
    grad
}

fn weighted_second_moment<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
    weight: impl Fn(T) -> T,
) -> Matrix<T> {
    let dim = block_dim(which, state);
    let mut out = Matrix::zeros(dim, dim);
    for_each_block_entry(which, state, data, side, |_, h, w| w.add_outer_to(-weight(h), &mut out));
    out.add_diagonal(-block_lambda(which, hp));
    out
}

/// Exact Hessian `−Σ σ(H)(1 − σ(H)) w wᵀ − λI` of the objective in the block.
pub fn exact_hessian<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<Matrix<T>, ModelError> {
    check_inputs(state, data, hp, side)?;
    check_selector(which, state)?;
    Ok(weighted_second_moment(which, state, data, hp, side, |h| {
        let p = sigmoid(h);
        p * (T::one() - p)
    }))
}

/// Global curvature bound `−¼ Σ w wᵀ − λI`, obtained from σ(1 − σ) ≤ ¼.
///
/// Independent of the observed values and of the current block, so it lies
/// below the exact Hessian everywhere along the block.
pub fn curvature<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<Matrix<T>, ModelError> {
    check_inputs(state, data, hp, side)?;
    check_selector(which, state)?;
    Ok(curvature_unchecked(which, state, data, hp, side))
}

pub(crate) fn curvature_unchecked<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Matrix<T> {
    weighted_second_moment(which, state, data, hp, side, |_| T::quarter())
}

/// Quadratic lower bound of the objective around an anchor block value.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorizerContext<T> {
    pub anchor: Vec<T>,
    pub grad_at_anchor: Vec<T>,
    pub curvature: Matrix<T>,
    pub objective_at_anchor: T,
}

impl<T: Scalar> MinorizerContext<T> {
    /// Builds the minorizer of the full objective for `which` at the current state.
    pub fn new(
        which: FactorSelector,
        state: &LatentState<T>,
        data: &RelationData,
        hp: &HyperParams<T>,
        side: Option<&SideInfo<T>>,
    ) -> Result<Self, ModelError> {
        let objective_at_anchor = log_posterior(state, data, hp, side)?;
        check_selector(which, state)?;
        Ok(Self {
            anchor: block_values(which, state),
            grad_at_anchor: gradient_unchecked(which, state, data, hp, side),
            curvature: curvature_unchecked(which, state, data, hp, side),
            objective_at_anchor,
        })
    }

    pub fn dim(&self) -> usize {
        self.anchor.len()
    }
}

/// `Q(Ω) = L(Ω_t) + (Ω − Ω_t)ᵀ∇L(Ω_t) + ½ (Ω − Ω_t)ᵀ K (Ω − Ω_t)`.
pub fn minorizer_value<T: Scalar>(ctx: &MinorizerContext<T>, omega: &[T]) -> Result<T, ModelError> {
    let dim = ctx.dim();
    if omega.len() != dim
        || ctx.grad_at_anchor.len() != dim
        || ctx.curvature.rows() != dim
        || ctx.curvature.cols() != dim
    {
        return Err(ModelError::Dimension(format!(
            "minorizer has dimension {dim}, omega has length {}",
            omega.len()
        )));
    }
    let delta: Vec<T> = omega.iter().zip(&ctx.anchor).map(|(&w, &a)| w - a).collect();
    Ok(ctx.objective_at_anchor
        + dot(&delta, &ctx.grad_at_anchor)
        + T::half() * ctx.curvature.quad_form(&delta))
}

fn one_hot_index<T: Scalar>(z: &[T]) -> Result<usize, ModelError> {
    let mut hot = None;
    for (k, &x) in z.iter().enumerate() {
        if x == T::one() {
            if hot.is_some() {
                return Err(ModelError::NotOneHot);
            }
            hot = Some(k);
        } else if x != T::zero() {
            return Err(ModelError::NotOneHot);
        }
    }
    hot.ok_or(ModelError::NotOneHot)
}

/// Row-major Kronecker product `z_i ⊗ z_j` of two one-hot vectors, so that
/// `vec(C)ᵀ (z_i ⊗ z_j) = C[z_i, z_j]`.
pub fn block_kron<T: Scalar>(z_i: &[T], z_j: &[T]) -> Result<Vec<T>, ModelError> {
    if z_i.len() != z_j.len() {
        return Err(ModelError::Dimension(format!(
            "one-hot vectors have lengths {} and {}",
            z_i.len(),
            z_j.len()
        )));
    }
    let k = z_i.len();
    let (a, b) = (one_hot_index(z_i)?, one_hot_index(z_j)?);
    let mut out = vec![T::zero(); k * k];
    out[a * k + b] = T::one();
    Ok(out)
}
