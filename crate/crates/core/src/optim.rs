//! Minorization-maximization trainer.
//!
//! Each continuous block is updated by a damped Newton step on its quadratic
//! minorizer, `Ω ← Ω + η (−K)⁻¹ ∇L`, with `η` chosen by Armijo backtracking.
//! Cluster labels are updated by exact per-object coordinate maximization.
//! Every update is an ascent step, so the objective is non-decreasing.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{RelationData, SideInfo};
use crate::linalg::{Cholesky, Matrix};
use crate::model::{
    self, block_dim, block_lambda, block_values, check_inputs, check_selector, log_lik_term,
    logit_unchecked, set_block, sigmoid, Feature, FactorSelector, ModelError,
};
use crate::scalar::{dot, Scalar};
use crate::state::{FitTrace, FitWarning, HyperParams, LatentState, StateError};

/// Standard deviation of the initial factor entries.
pub const INIT_SCALE: f64 = 0.1;

/// Maximum number of step halvings tried by [`armijo_eta`].
pub const MAX_BACKTRACKS: usize = 30;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
}

/// One stage of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    URows,
    VRows,
    Beta,
    C,
    Clusters,
    Bias,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepSchedule {
    pub order: Vec<Phase>,
    /// Cluster reassignment runs on sweeps whose index is a multiple of this.
    pub reassign_every: usize,
}

impl Default for SweepSchedule {
    fn default() -> Self {
        Self {
            order: vec![Phase::URows, Phase::VRows, Phase::Beta, Phase::C, Phase::Clusters, Phase::Bias],
            reassign_every: 1,
        }
    }
}

impl SweepSchedule {
    pub fn check(&self) -> Result<(), OptimError> {
        if self.reassign_every == 0 {
            return Err(OptimError::Schedule("reassign_every must be positive".into()));
        }
        for (idx, phase) in self.order.iter().enumerate() {
            if self.order[..idx].contains(phase) {
                return Err(OptimError::Schedule(format!("phase {phase:?} appears more than once")));
            }
        }
        Ok(())
    }
}

/// Which parts of the model are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationMode {
    #[default]
    Full,
    /// No block term: C held at zero, labels unused.
    FactorOnly,
    /// No factor term: U and V held at zero.
    BlockOnly,
}

impl AblationMode {
    pub const ALL: [AblationMode; 3] = [AblationMode::Full, AblationMode::FactorOnly, AblationMode::BlockOnly];

    pub fn as_str(&self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::FactorOnly => "factor-only",
            AblationMode::BlockOnly => "block-only",
        }
    }

    fn runs(&self, phase: Phase) -> bool {
        !matches!(
            (self, phase),
            (AblationMode::FactorOnly, Phase::C | Phase::Clusters) | (AblationMode::BlockOnly, Phase::URows | Phase::VRows)
        )
    }

    /// Zeroes the frozen blocks.
    pub fn apply<T: Scalar>(&self, state: &mut LatentState<T>) {
        match self {
            AblationMode::Full => {}
            AblationMode::FactorOnly => state.c.fill(T::zero()),
            AblationMode::BlockOnly => {
                state.u.fill(T::zero());
                state.v.fill(T::zero());
            }
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "full" => Ok(AblationMode::Full),
            "factor-only" => Ok(AblationMode::FactorOnly),
            "block-only" => Ok(AblationMode::BlockOnly),
            other => Err(format!("unknown mode `{other}` (expected full, factor-only or block-only)")),
        }
    }
}

/// Random initial state: factors i.i.d. N(0, 0.1²), C = 0, β = 0, ε = 0,
/// labels uniform over `[0, K)`. Deterministic in `hp.seed`.
pub fn init_state<T: Scalar>(n: usize, hp: &HyperParams<T>, side_dim: usize) -> LatentState<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let normal = Normal::new(0.0, INIT_SCALE).expect("valid normal");
    let mut state = LatentState::zeros(n, hp.d, hp.k, side_dim);
    for x in state.u.as_mut_slice() {
        *x = T::lit(normal.sample(&mut rng));
    }
    for x in state.v.as_mut_slice() {
        *x = T::lit(normal.sample(&mut rng));
    }
    for z in state.z.iter_mut() {
        *z = rng.random_range(0..hp.k);
    }
    state
}

/// Objective along a search direction, restricted to the terms that move.
///
/// The logit is linear in the block, so `H_e(Ω + η d) = H_e(Ω) + η wₑᵀd`.
struct LineObjective<T> {
    s: Vec<bool>,
    h0: Vec<T>,
    proj: Vec<T>,
    omega: Vec<T>,
    dir: Vec<T>,
    lambda: T,
}

impl<T: Scalar> LineObjective<T> {
    fn value(&self, eta: T) -> T {
        let mut acc = T::zero();
        for ((&s, &h), &p) in self.s.iter().zip(&self.h0).zip(&self.proj) {
            acc += log_lik_term(s, h + eta * p);
        }
        let mut norm = T::zero();
        for (&w, &d) in self.omega.iter().zip(&self.dir) {
            let x = w + eta * d;
            norm += x * x;
        }
        acc - T::half() * self.lambda * norm
    }
}

/// Gradient, MM ascent direction and line objective for one block.
struct BlockUpdate<T> {
    grad: Vec<T>,
    dir: Vec<T>,
    line: LineObjective<T>,
}

impl<T: Scalar> BlockUpdate<T> {
    /// Directional derivative `∇Lᵀ(−K)⁻¹∇L`, non-negative.
    fn decrement(&self) -> T {
        dot(&self.grad, &self.dir)
    }

    fn armijo(&self, hp: &HyperParams<T>) -> T {
        let base = self.line.value(T::zero());
        let slope = self.decrement();
        let mut eta = hp.eta0;
        for _ in 0..=MAX_BACKTRACKS {
            if self.line.value(eta) >= base + hp.armijo_slope * eta * slope {
                return eta;
            }
            eta *= hp.armijo_shrink;
        }
        T::zero()
    }
}

/// Factorized `−K` for the previous row, reused while the next row has the
/// same observed neighbours and the opposite factor is unchanged.
#[derive(Default)]
struct CurvatureCache<T> {
    key: Option<(bool, Vec<usize>)>,
    factor: Option<Cholesky<T>>,
}

impl<T> CurvatureCache<T> {
    fn clear(&mut self) {
        self.key = None;
        self.factor = None;
    }
}

fn row_key(which: FactorSelector, data: &RelationData) -> Option<(bool, Vec<usize>)> {
    let entries = data.entries();
    match which {
        FactorSelector::URow(i) => Some((true, entries[data.out_range(i)].iter().map(|e| e.j).collect())),
        FactorSelector::VRow(j) => Some((false, data.in_indices(j).iter().map(|&k| entries[k].i).collect())),
        _ => None,
    }
}

fn prepare<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
    cache: Option<&mut CurvatureCache<T>>,
) -> Result<BlockUpdate<T>, ModelError> {
    let dim = block_dim(which, state);
    let lambda = block_lambda(which, hp);
    let omega = block_values(which, state);

    let mut s = Vec::new();
    let mut h0 = Vec::new();
    let mut features: Vec<Feature<'_, T>> = Vec::new();
    model::for_each_block_entry(which, state, data, side, |e, h, w| {
        s.push(e.s);
        h0.push(h);
        features.push(w);
    });

    let mut grad: Vec<T> = omega.iter().map(|&x| -lambda * x).collect();
    for ((&s, &h), w) in s.iter().zip(&h0).zip(&features) {
        let r = if s { T::one() } else { T::zero() } - sigmoid(h);
        match *w {
            Feature::Dense(v) => grad.iter_mut().zip(v).for_each(|(g, &x)| *g += r * x),
            Feature::OneHot(k) => grad[k] += r,
            Feature::Unit => grad[0] += r,
        }
    }

    let key = match cache.as_deref() {
        Some(_) => row_key(which, data),
        None => None,
    };
    let reuse = match (&key, cache.as_deref()) {
        (Some(k), Some(c)) => c.key.as_ref() == Some(k) && c.factor.is_some(),
        _ => false,
    };
    let fresh;
    let factor = if reuse {
        cache.as_deref().and_then(|c| c.factor.as_ref()).expect("cached factor")
    } else {
        // −K = ¼ Σ w wᵀ + λI
        let mut neg_k = Matrix::zeros(dim, dim);
        for w in &features {
            match *w {
                Feature::Dense(v) => neg_k.add_outer(T::quarter(), v),
                Feature::OneHot(k) => neg_k[(k, k)] += T::quarter(),
                Feature::Unit => neg_k[(0, 0)] += T::quarter(),
            }
        }
        neg_k.add_diagonal(lambda);
        let chol = Cholesky::new(&neg_k)
            .filter(|_| neg_k.is_finite())
            .ok_or(ModelError::SingularCurvature(which))?;
        match cache {
            Some(c) if key.is_some() => {
                c.key = key;
                c.factor = Some(chol);
                c.factor.as_ref().expect("just stored")
            }
            _ => {
                fresh = chol;
                &fresh
            }
        }
    };
    let dir = factor.solve(&grad);
    let proj = features.iter().map(|w| w.dot(&dir)).collect();
    Ok(BlockUpdate { grad, dir: dir.clone(), line: LineObjective { s, h0, proj, omega, dir, lambda } })
}

fn checked_prepare<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<BlockUpdate<T>, ModelError> {
    check_inputs(state, data, hp, side)?;
    check_selector(which, state)?;
    prepare(which, state, data, hp, side, None)
}

/// MM ascent direction `(−K)⁻¹ ∇L` for the block.
pub fn mm_direction<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<Vec<T>, ModelError> {
    Ok(checked_prepare(which, state, data, hp, side)?.dir)
}

/// Returns a copy of `state` with the block replaced by `Ω − η K⁻¹ ∇L`.
pub fn mm_step<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
    eta: T,
) -> Result<LatentState<T>, ModelError> {
    let update = checked_prepare(which, state, data, hp, side)?;
    let mut next = state.clone();
    let moved: Vec<T> = update.line.omega.iter().zip(&update.dir).map(|(&w, &d)| w + eta * d).collect();
    set_block(which, &mut next, &moved);
    Ok(next)
}

/// Armijo backtracking from `hp.eta0`; returns 0 when no trial step is accepted.
pub fn armijo_eta<T: Scalar>(
    which: FactorSelector,
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<T, ModelError> {
    Ok(checked_prepare(which, state, data, hp, side)?.armijo(hp))
}

/// Exact coordinate maximization of each label in ascending object order.
/// Returns the number of labels that changed.
fn reassign_in_place<T: Scalar>(
    state: &mut LatentState<T>,
    data: &RelationData,
    side: Option<&SideInfo<T>>,
) -> usize {
    let k = state.k();
    if k <= 1 {
        return 0;
    }
    let entries = data.entries();
    // Logit without the block term; independent of the labels.
    let base: Vec<T> = entries
        .iter()
        .map(|e| logit_unchecked(state, e.i, e.j, side) - state.c[(state.z[e.i], state.z[e.j])])
        .collect();
    let mut changes = 0;
    let mut scores = vec![T::zero(); k];
    for i in 0..state.n() {
        scores.iter_mut().for_each(|x| *x = T::zero());
        for idx in data.out_range(i) {
            let e = &entries[idx];
            for (cand, score) in scores.iter_mut().enumerate() {
                let col = if e.j == i { cand } else { state.z[e.j] };
                *score += log_lik_term(e.s, base[idx] + state.c[(cand, col)]);
            }
        }
        for &idx in data.in_indices(i) {
            let e = &entries[idx];
            if e.i == i {
                continue;
            }
            let row = state.z[e.i];
            for (cand, score) in scores.iter_mut().enumerate() {
                *score += log_lik_term(e.s, base[idx] + state.c[(row, cand)]);
            }
        }
        let mut best = 0;
        for cand in 1..k {
            if scores[cand] > scores[best] {
                best = cand;
            }
        }
        if best != state.z[i] {
            state.z[i] = best;
            changes += 1;
        }
    }
    changes
}

/// Sequential exact label update; never lowers the objective.
pub fn reassign_clusters<T: Scalar>(
    state: &LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
) -> Result<LatentState<T>, ModelError> {
    check_inputs(state, data, hp, side)?;
    let mut next = state.clone();
    reassign_in_place(&mut next, data, side);
    Ok(next)
}

/// `σ(H_ij)` for each pair.
pub fn predict<T: Scalar>(
    state: &LatentState<T>,
    pairs: &[(usize, usize)],
    side: Option<&SideInfo<T>>,
) -> Result<Vec<T>, ModelError> {
    pairs
        .iter()
        .map(|&(i, j)| model::logit(state, i, j, side).map(sigmoid))
        .collect()
}

/// Stateful driver running sweeps of the schedule.
pub struct Trainer<'a, T: Scalar> {
    data: &'a RelationData,
    hp: &'a HyperParams<T>,
    side: Option<&'a SideInfo<T>>,
    schedule: SweepSchedule,
    mode: AblationMode,
    state: LatentState<T>,
    trace: FitTrace<T>,
    converged: bool,
    cache: CurvatureCache<T>,
}

impl<'a, T: Scalar> Trainer<'a, T> {
    /// Starts from [`init_state`] with the ablation applied.
    pub fn new(
        data: &'a RelationData,
        hp: &'a HyperParams<T>,
        side: Option<&'a SideInfo<T>>,
        schedule: SweepSchedule,
        mode: AblationMode,
    ) -> Result<Self, OptimError> {
        hp.check()?;
        let state = init_state(data.n(), hp, side.map_or(0, |s| s.dim()));
        Self::warm_start(state, data, hp, side, schedule, mode)
    }

    pub fn warm_start(
        mut state: LatentState<T>,
        data: &'a RelationData,
        hp: &'a HyperParams<T>,
        side: Option<&'a SideInfo<T>>,
        schedule: SweepSchedule,
        mode: AblationMode,
    ) -> Result<Self, OptimError> {
        hp.check()?;
        schedule.check()?;
        mode.apply(&mut state);
        let initial = model::log_posterior(&state, data, hp, side)?;
        let trace = FitTrace { objective_per_sweep: vec![initial], ..Default::default() };
        Ok(Self {
            data,
            hp,
            side,
            schedule,
            mode,
            state,
            trace,
            converged: false,
            cache: CurvatureCache::default(),
        })
    }

    pub fn state(&self) -> &LatentState<T> {
        &self.state
    }

    pub fn trace(&self) -> &FitTrace<T> {
        &self.trace
    }

    pub fn sweeps_done(&self) -> usize {
        self.trace.sweeps()
    }

    /// True once a sweep improved the objective by less than `rel_tol`.
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// True when no further sweep should run.
    pub fn finished(&self) -> bool {
        self.converged || self.sweeps_done() >= self.hp.max_sweeps
    }

    fn update_block(&mut self, which: FactorSelector, sweep: usize) -> Result<(), OptimError> {
        let prepared = prepare(which, &self.state, self.data, self.hp, self.side, Some(&mut self.cache));
        match prepared {
            Ok(update) => {
                let eta = update.armijo(self.hp);
                if eta > T::zero() {
                    let moved: Vec<T> =
                        update.line.omega.iter().zip(&update.dir).map(|(&w, &d)| w + eta * d).collect();
                    set_block(which, &mut self.state, &moved);
                }
                self.trace.eta_per_update.push(eta);
                Ok(())
            }
            Err(ModelError::SingularCurvature(block)) => {
                self.trace.eta_per_update.push(T::zero());
                self.trace.warnings.push(FitWarning {
                    sweep,
                    block: block.to_string(),
                    message: "singular curvature, block skipped".into(),
                });
                Ok(())
            }
            Err(err) => Err(err.into()),
        }
    }

    fn run_phase(&mut self, phase: Phase, sweep: usize) -> Result<usize, OptimError> {
        if !self.mode.runs(phase) {
            return Ok(0);
        }
        self.cache.clear();
        let n = self.state.n();
        match phase {
            Phase::URows => {
                for i in 0..n {
                    self.update_block(FactorSelector::URow(i), sweep)?;
                }
            }
            Phase::VRows => {
                for j in 0..n {
                    self.update_block(FactorSelector::VRow(j), sweep)?;
                }
            }
            Phase::Beta => {
                if self.state.m() > 0 {
                    self.update_block(FactorSelector::Beta, sweep)?;
                }
            }
            Phase::C => self.update_block(FactorSelector::CFlat, sweep)?,
            Phase::Bias => self.update_block(FactorSelector::Bias, sweep)?,
            Phase::Clusters => {
                if sweep.is_multiple_of(self.schedule.reassign_every) {
                    return Ok(reassign_in_place(&mut self.state, self.data, self.side));
                }
            }
        }
        Ok(0)
    }

    /// Runs one sweep and returns the objective after it.
    pub fn sweep(&mut self) -> Result<T, OptimError> {
        let sweep = self.sweeps_done();
        let order = self.schedule.order.clone();
        let mut reassigned = 0;
        for phase in order {
            reassigned += self.run_phase(phase, sweep)?;
        }
        let objective = model::log_posterior(&self.state, self.data, self.hp, self.side)?;
        let previous = self.trace.final_objective().unwrap_or(objective);
        self.trace.objective_per_sweep.push(objective);
        self.trace.reassignment_counts.push(reassigned);
        let scale = previous.abs().max(T::one());
        self.converged = (objective - previous) / scale < self.hp.rel_tol;
        Ok(objective)
    }

    /// Sweeps until convergence or `max_sweeps`, calling `on_sweep(index, objective)`.
    pub fn run_with(
        mut self,
        mut on_sweep: impl FnMut(usize, T),
    ) -> Result<(LatentState<T>, FitTrace<T>), OptimError> {
        while !self.finished() {
            let objective = self.sweep()?;
            on_sweep(self.sweeps_done(), objective);
        }
        Ok((self.state, self.trace))
    }

    pub fn run(self) -> Result<(LatentState<T>, FitTrace<T>), OptimError> {
        self.run_with(|_, _| {})
    }
}

/// Fits the model from a seeded random start.
pub fn fit<T: Scalar>(
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
    schedule: &SweepSchedule,
    mode: AblationMode,
) -> Result<(LatentState<T>, FitTrace<T>), OptimError> {
    Trainer::new(data, hp, side, schedule.clone(), mode)?.run()
}

/// Fits the model starting from `state`.
pub fn fit_from<T: Scalar>(
    state: LatentState<T>,
    data: &RelationData,
    hp: &HyperParams<T>,
    side: Option<&SideInfo<T>>,
    schedule: &SweepSchedule,
    mode: AblationMode,
) -> Result<(LatentState<T>, FitTrace<T>), OptimError> {
    Trainer::warm_start(state, data, hp, side, schedule.clone(), mode)?.run()
}
