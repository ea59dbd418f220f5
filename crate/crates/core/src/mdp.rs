//! Finite MDP representation and exact planning: value iteration, greedy
//! policy extraction, and exact policy evaluation by direct linear solve.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};

/// Tolerance used when validating transition-row sums.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Absolute tolerance at which two Q values count as tied; ties break toward
/// the lowest action index.
pub const TIE_TOL: f64 = 1e-9;
/// Q-gap threshold of the policy-equality protocol: states whose best-minus-
/// second-best Q gap falls below this in either formulation are excluded from
/// policy comparisons (argmax identity holds only in exact arithmetic).
pub const Q_GAP_TOL: f64 = 1e-6;
/// Default sup-norm delta at which value iteration stops.
pub const DEFAULT_VI_TOL: f64 = 1e-10;
/// Default iteration cap for value iteration.
pub const DEFAULT_VI_MAX_ITERS: usize = 100_000;
/// Residual bound for the exact policy-evaluation linear solve.
pub const EVAL_RESIDUAL_TOL: f64 = 1e-8;

/// A finite MDP: rewards indexed `(s, a)`, transitions indexed `(s, a, s')`,
/// and a discount factor in `[0, 1)`.
///
/// Transition rows may be substochastic (sum < 1): the zeros-matrix average
/// used by discount regularization produces such rows, and planning remains a
/// contraction on them.
#[derive(Debug, Clone)]
pub struct Mdp {
    rewards: Array2<f64>,
    transitions: Array3<f64>,
    gamma: f64,
}

impl Mdp {
    pub fn new(rewards: Array2<f64>, transitions: Array3<f64>, gamma: f64) -> Result<Self> {
        let (n, a) = rewards.dim();
        if n == 0 || a == 0 {
            return Err(Error::InvalidModel(
                "state and action counts must be positive".into(),
            ));
        }
        if transitions.dim() != (n, a, n) {
            return Err(Error::InvalidModel(format!(
                "transition tensor shape {:?} does not match rewards shape ({n}, {a})",
                transitions.dim()
            )));
        }
        if !gamma.is_finite() || !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidModel(format!(
                "discount factor must satisfy 0 <= gamma < 1, got {gamma}"
            )));
        }
        if rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidModel("rewards contain non-finite entries".into()));
        }
        for s in 0..n {
            for k in 0..a {
                let row = transitions.slice(ndarray::s![s, k, ..]);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "transition row ({s}, {k}) has negative or non-finite entries"
                    )));
                }
                let sum: f64 = row.sum();
                if sum > 1.0 + ROW_SUM_TOL {
                    return Err(Error::InvalidModel(format!(
                        "transition row ({s}, {k}) sums to {sum}, above 1"
                    )));
                }
            }
        }
        Ok(Self {
            rewards,
            transitions,
            gamma,
        })
    }

    /// Random dense MDP: rewards Uniform[0,1], every transition row a
    /// normalized vector of Uniform[0,1] draws. Used by the equivalence-
    /// theorem trials.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let rewards = Array2::from_shape_fn((n_states, n_actions), |_| rng.gen::<f64>());
        let mut transitions = Array3::zeros((n_states, n_actions, n_states));
        for s in 0..n_states {
            for k in 0..n_actions {
                let mut w: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>()).collect();
                let mut total: f64 = w.iter().sum();
                while total <= 0.0 {
                    w = (0..n_states).map(|_| rng.gen::<f64>()).collect();
                    total = w.iter().sum();
                }
                for (j, wj) in w.iter().enumerate() {
                    transitions[[s, k, j]] = wj / total;
                }
            }
        }
        Self::new(rewards, transitions, gamma)
    }

    pub fn n_states(&self) -> usize {
        self.rewards.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.rewards.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rewards(&self) -> &Array2<f64> {
        &self.rewards
    }

    pub fn transitions(&self) -> &Array3<f64> {
        &self.transitions
    }

    pub fn transition_row(&self, s: usize, a: usize) -> ArrayView1<'_, f64> {
        self.transitions.slice(ndarray::s![s, a, ..])
    }

    /// Same model with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.rewards.clone(), self.transitions.clone(), gamma)
    }

    pub fn is_row_stochastic(&self, s: usize, a: usize) -> bool {
        (self.transition_row(s, a).sum() - 1.0).abs() <= ROW_SUM_TOL
    }
}

/// Deterministic policy: one action index per state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn new(actions: Vec<usize>, n_actions: usize) -> Result<Self> {
        if actions.iter().any(|&a| a >= n_actions) {
            return Err(Error::InvalidParameter(format!(
                "policy contains an action index >= {n_actions}"
            )));
        }
        Ok(Self { actions })
    }

    pub fn action(&self, s: usize) -> usize {
        self.actions[s]
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// State values, one per state.
#[derive(Debug, Clone)]
pub struct ValueFunction {
    v: Array1<f64>,
}

impl ValueFunction {
    pub fn new(v: Array1<f64>) -> Result<Self> {
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(
                "value function contains non-finite entries".into(),
            ));
        }
        Ok(Self { v })
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.v
    }

    pub fn get(&self, s: usize) -> f64 {
        self.v[s]
    }

    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }
}

/// Action values indexed `(s, a)`.
#[derive(Debug, Clone)]
pub struct QFunction {
    q: Array2<f64>,
}

impl QFunction {
    pub fn new(q: Array2<f64>) -> Result<Self> {
        if q.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure(
                "Q function contains non-finite entries".into(),
            ));
        }
        Ok(Self { q })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.q[[s, a]]
    }

    pub fn n_states(&self) -> usize {
        self.q.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.q.ncols()
    }

    /// Best-minus-second-best gap at state `s`; infinite for single-action MDPs.
    pub fn gap(&self, s: usize) -> f64 {
        let row = self.q.row(s);
        if row.len() < 2 {
            return f64::INFINITY;
        }
        let mut best = f64::NEG_INFINITY;
        let mut second = f64::NEG_INFINITY;
        for &v in row {
            if v > best {
                second = best;
                best = v;
            } else if v > second {
                second = v;
            }
        }
        best - second
    }
}

/// Output of [`value_iteration`].
#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: ValueFunction,
    pub q: QFunction,
    pub policy: Policy,
    pub iterations: usize,
    /// False when the iteration cap was hit before the delta dropped below tol.
    pub converged: bool,
    /// Sup-norm delta per sweep; successive entries contract by at most gamma.
    pub deltas: Vec<f64>,
}

/// Value iteration to sup-norm delta below `tol` (or `max_iters` sweeps).
///
/// The returned policy is greedy with respect to the returned Q, with ties
/// within [`TIE_TOL`] broken toward the lowest action index.
pub fn value_iteration(mdp: &Mdp, tol: f64, max_iters: usize) -> Result<ValueIterationResult> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "value iteration tolerance must be positive, got {tol}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::InvalidParameter(
            "value iteration needs max_iters >= 1".into(),
        ));
    }
    let n = mdp.n_states();
    let na = mdp.n_actions();
    let gamma = mdp.gamma();
    let t = mdp.transitions();
    let r = mdp.rewards();

    let mut v = Array1::<f64>::zeros(n);
    let mut next = Array1::<f64>::zeros(n);
    let mut deltas = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    while iterations < max_iters {
        let mut delta = 0.0_f64;
        for s in 0..n {
            let mut best = f64::NEG_INFINITY;
            for a in 0..na {
                let mut exp = 0.0;
                for j in 0..n {
                    exp += t[[s, a, j]] * v[j];
                }
                let q = r[[s, a]] + gamma * exp;
                if q > best {
                    best = q;
                }
            }
            delta = delta.max((best - v[s]).abs());
            next[s] = best;
        }
        std::mem::swap(&mut v, &mut next);
        deltas.push(delta);
        iterations += 1;
        if delta < tol {
            converged = true;
            break;
        }
    }

    // Final Q against the converged V, so V = max_a Q exactly and the
    // Bellman residual of the returned pair is at most gamma * delta.
    let mut q = Array2::<f64>::zeros((n, na));
    for s in 0..n {
        for a in 0..na {
            let mut exp = 0.0;
            for j in 0..n {
                exp += t[[s, a, j]] * v[j];
            }
            q[[s, a]] = r[[s, a]] + gamma * exp;
        }
    }
    let mut v_out = Array1::<f64>::zeros(n);
    for s in 0..n {
        v_out[s] = q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
    }

    let q = QFunction::new(q)?;
    let policy = greedy_policy(&q);
    Ok(ValueIterationResult {
        values: ValueFunction::new(v_out)?,
        q,
        policy,
        iterations,
        converged,
        deltas,
    })
}

/// Per-state argmax with ties within [`TIE_TOL`] broken toward the lowest
/// action index.
pub fn greedy_policy(q: &QFunction) -> Policy {
    let actions = (0..q.n_states())
        .map(|s| {
            let row = q.values().row(s);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|&v| v >= best - TIE_TOL).unwrap_or(0)
        })
        .collect();
    Policy { actions }
}

/// Exact policy evaluation: solves `(I - gamma * T_pi) V = R_pi` by dense LU.
pub fn evaluate_policy(mdp: &Mdp, policy: &Policy) -> Result<ValueFunction> {
    let n = mdp.n_states();
    if policy.len() != n {
        return Err(Error::InvalidParameter(format!(
            "policy has {} states, MDP has {n}",
            policy.len()
        )));
    }
    if policy.actions().iter().any(|&a| a >= mdp.n_actions()) {
        return Err(Error::InvalidParameter(
            "policy contains an out-of-range action".into(),
        ));
    }
    let gamma = mdp.gamma();
    let mut a_mat = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for s in 0..n {
        let act = policy.action(s);
        for j in 0..n {
            a_mat[(s, j)] -= gamma * mdp.transitions()[[s, act, j]];
        }
        b[s] = mdp.rewards()[[s, act]];
    }
    let x = a_mat
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::NumericalFailure("singular policy-evaluation system".into()))?;
    let residual = (&a_mat * &x - &b).abs().max();
    if residual > EVAL_RESIDUAL_TOL {
        return Err(Error::NumericalFailure(format!(
            "policy-evaluation residual {residual} exceeds {EVAL_RESIDUAL_TOL}"
        )));
    }
    ValueFunction::new(Array1::from_iter(x.iter().copied()))
}

/// Outcome of comparing two greedy policies under the policy-equality
/// protocol: only states whose Q gap exceeds [`Q_GAP_TOL`] in *both*
/// formulations participate in the equality check.
#[derive(Debug, Clone)]
pub struct PolicyComparison {
    /// States that were decisive in both Q functions.
    pub decisive_states: usize,
    /// Decisive states on which the greedy actions disagree.
    pub disagreements: Vec<usize>,
}

impl PolicyComparison {
    pub fn equivalent(&self) -> bool {
        self.disagreements.is_empty()
    }
}

/// Policy-equality protocol over two Q functions of the same shape.
pub fn compare_policies(q1: &QFunction, q2: &QFunction) -> PolicyComparison {
    let p1 = greedy_policy(q1);
    let p2 = greedy_policy(q2);
    let mut decisive = 0;
    let mut disagreements = Vec::new();
    for s in 0..q1.n_states() {
        if q1.gap(s) > Q_GAP_TOL && q2.gap(s) > Q_GAP_TOL {
            decisive += 1;
            if p1.action(s) != p2.action(s) {
                disagreements.push(s);
            }
        }
    }
    PolicyComparison {
        decisive_states: decisive,
        disagreements,
    }
}
