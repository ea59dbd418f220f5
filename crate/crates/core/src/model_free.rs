//! Tabular Q-learning with state-action-specific regularization: with
//! probability eps*(s, a) — recomputed each step from the running visit
//! counts and running MLE — the update uses a successor drawn from the
//! regularization matrix instead of a real environment step. Baselines: the
//! same loop with eps* replaced by a constant, and plain Q-learning.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::estimation::{uniform_tensor, TransitionCounts};
use crate::mdp::{greedy_policy, Mdp, QFunction};
use crate::regularizers::eps_star_uniform_row;

#[derive(Debug, Clone)]
pub struct QLearnConfig {
    /// Step size in (0, 1].
    pub step_size: f64,
    /// Behavior-policy exploration rate (epsilon-greedy on the current Q).
    pub behavior_exploration: f64,
    pub episodes: usize,
    pub steps_per_episode: usize,
    /// Regularization matrix sampled for simulated updates; `None` means the
    /// uniform matrix.
    pub t_reg: Option<Array3<f64>>,
    /// Cap on consecutive simulated updates; a real step is forced after it.
    /// The eps* = 1 convention for unvisited pairs would otherwise never
    /// advance the environment. In eps*-mode the cap also bounds how many
    /// simulated updates any single pair may receive between its own real
    /// observations, so rarely-selected pairs cannot stay unobserved (and
    /// eps*-biased) forever.
    pub sim_cap: usize,
    pub seed: u64,
    /// Visit counts to pre-seed the running MLE with (defaults to empty).
    pub initial_counts: Option<TransitionCounts>,
}

impl QLearnConfig {
    pub fn new(episodes: usize, steps_per_episode: usize, seed: u64) -> Self {
        Self {
            step_size: 0.1,
            behavior_exploration: 0.1,
            episodes,
            steps_per_episode,
            t_reg: None,
            sim_cap: 10,
            seed,
            initial_counts: None,
        }
    }

    fn validate(&self, env: &Mdp) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "step size must lie in (0, 1], got {}",
                self.step_size
            )));
        }
        if !(0.0..=1.0).contains(&self.behavior_exploration) {
            return Err(Error::InvalidParameter(
                "behavior exploration must lie in [0, 1]".into(),
            ));
        }
        if self.sim_cap == 0 {
            return Err(Error::InvalidParameter("sim_cap must be >= 1".into()));
        }
        let (n, a) = (env.n_states(), env.n_actions());
        if let Some(t) = &self.t_reg {
            if t.dim() != (n, a, n) {
                return Err(Error::InvalidParameter(
                    "t_reg shape does not match the environment".into(),
                ));
            }
        }
        if let Some(c) = &self.initial_counts {
            if c.n_states() != n || c.n_actions() != a {
                return Err(Error::InvalidParameter(
                    "initial counts shape does not match the environment".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineMode {
    /// Plain tabular Q-learning.
    Standard,
    /// The regularized loop with eps* replaced by a constant probability.
    ConstantProb(f64),
}

#[derive(Debug, Clone)]
pub struct QLearnResult {
    pub q: QFunction,
    /// Sum of collected rewards per episode (real steps only).
    pub episode_rewards: Vec<f64>,
    pub real_steps: usize,
    pub sim_steps: usize,
}

impl QLearnResult {
    pub fn greedy(&self) -> crate::mdp::Policy {
        greedy_policy(&self.q)
    }
}

enum SimProbability {
    EpsStar,
    Constant(f64),
    Never,
}

/// Q-learning with state-action-specific regularization. Each step computes
/// eps*(s, a) from the running counts with the running MLE as plug-in, draws
/// `x ~ Bernoulli(eps*)`, and on `x = 1` updates with a simulated successor
/// from the regularization matrix without advancing the environment or the
/// step counter.
pub fn q_learning_regularized(env: &Mdp, cfg: &QLearnConfig) -> Result<QLearnResult> {
    run_q_learning(env, cfg, SimProbability::EpsStar)
}

/// Baselines sharing the exact loop (and RNG stream) of the regularized
/// learner: `Standard` never simulates, `ConstantProb(p)` simulates with a
/// fixed probability.
pub fn q_learning_baseline(env: &Mdp, cfg: &QLearnConfig, mode: BaselineMode) -> Result<QLearnResult> {
    let prob = match mode {
        BaselineMode::Standard => SimProbability::Never,
        BaselineMode::ConstantProb(p) => {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidParameter(format!(
                    "constant probability must lie in [0, 1], got {p}"
                )));
            }
            SimProbability::Constant(p)
        }
    };
    run_q_learning(env, cfg, prob)
}

fn run_q_learning(env: &Mdp, cfg: &QLearnConfig, sim: SimProbability) -> Result<QLearnResult> {
    cfg.validate(env)?;
    let n = env.n_states();
    let na = env.n_actions();
    let t_reg = cfg
        .t_reg
        .clone()
        .unwrap_or_else(|| uniform_tensor(n, na));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut q = Array2::<f64>::zeros((n, na));
    let mut counts = cfg
        .initial_counts
        .clone()
        .unwrap_or_else(|| TransitionCounts::zeros(n, na));
    let alpha = cfg.step_size;
    let gamma = env.gamma();

    // Per-pair simulated updates since the pair's own last real observation.
    // Only eps*-mode uses this: without it, a pair the behavior rarely picks
    // keeps c = 0 (eps* = 1) and simulates on every selection, never earning
    // real data, because the global consecutive counter is reset by other
    // pairs' real steps.
    let use_pair_budget = matches!(sim, SimProbability::EpsStar);
    let mut pair_sims = Array2::<usize>::zeros((n, na));

    let mut episode_rewards = Vec::with_capacity(cfg.episodes);
    let mut real_steps = 0usize;
    let mut sim_steps = 0usize;

    for _ in 0..cfg.episodes {
        let mut s = rng.gen_range(0..n);
        let mut steps = 0usize;
        let mut consecutive_sims = 0usize;
        let mut collected = 0.0;
        while steps < cfg.steps_per_episode {
            let a = behavior_action(&q, s, cfg.behavior_exploration, &mut rng);
            let p = match sim {
                SimProbability::EpsStar => running_eps_star(&counts, s, a),
                SimProbability::Constant(p) => p,
                SimProbability::Never => 0.0,
            };
            let capped = consecutive_sims >= cfg.sim_cap
                || (use_pair_budget && pair_sims[[s, a]] >= cfg.sim_cap);
            let simulate = !capped && bernoulli(p, &mut rng);
            let r = env.rewards()[[s, a]];
            if simulate {
                let s_sim = sample_row(&t_reg, s, a, &mut rng);
                let target = r + gamma * row_max(&q, s_sim);
                q[[s, a]] += alpha * (target - q[[s, a]]);
                consecutive_sims += 1;
                pair_sims[[s, a]] += 1;
                sim_steps += 1;
            } else {
                let s_next = {
                    let row = env.transition_row(s, a);
                    let u: f64 = rng.gen();
                    let mut acc = 0.0;
                    let mut pick = n - 1;
                    for (j, &pj) in row.iter().enumerate() {
                        acc += pj;
                        if u < acc {
                            pick = j;
                            break;
                        }
                    }
                    pick
                };
                let target = r + gamma * row_max(&q, s_next);
                q[[s, a]] += alpha * (target - q[[s, a]]);
                counts.record(s, a, s_next);
                collected += r;
                steps += 1;
                real_steps += 1;
                consecutive_sims = 0;
                pair_sims[[s, a]] = 0;
                s = s_next;
            }
        }
        episode_rewards.push(collected);
    }

    Ok(QLearnResult {
        q: QFunction::new(q)?,
        episode_rewards,
        real_steps,
        sim_steps,
    })
}

/// eps*(s, a) from data observed so far: unvisited pairs take the c = 0
/// convention (1), visited pairs use the running MLE row as plug-in.
fn running_eps_star(counts: &TransitionCounts, s: usize, a: usize) -> f64 {
    let c = counts.row_total(s, a);
    if c == 0 {
        return 1.0;
    }
    let n = counts.n_states();
    let row = ndarray::Array1::from_shape_fn(n, |j| {
        counts.counts()[[s, a, j]] as f64 / c as f64
    });
    eps_star_uniform_row(row.view(), c)
}

/// Bernoulli draw that consumes no randomness at p = 0 or p = 1, so
/// degenerate runs match the standard baseline stream exactly.
fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.gen::<f64>() < p
    }
}

fn behavior_action<R: Rng + ?Sized>(
    q: &Array2<f64>,
    s: usize,
    exploration: f64,
    rng: &mut R,
) -> usize {
    let na = q.ncols();
    if bernoulli(exploration, rng) {
        return rng.gen_range(0..na);
    }
    // Greedy with lowest-index tie-breaking.
    let row = q.row(s);
    let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row.iter()
        .position(|&v| v >= best - crate::mdp::TIE_TOL)
        .unwrap_or(0)
}

fn row_max(q: &Array2<f64>, s: usize) -> f64 {
    q.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn sample_row<R: Rng + ?Sized>(t: &Array3<f64>, s: usize, a: usize, rng: &mut R) -> usize {
    let n = t.dim().2;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut pick = n - 1;
    for j in 0..n {
        acc += t[[s, a, j]];
        if u < acc {
            pick = j;
            break;
        }
    }
    pick
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::value_iteration;
    use ndarray::array;

    /// Two-state deterministic MDP: action 0 stays, action 1 switches.
    /// Staying at state 1 pays 1; switching from 0 pays 0.2.
    fn two_state() -> Mdp {
        let rewards = array![[0.0, 0.2], [1.0, 0.0]];
        let t = array![
            [[1.0, 0.0], [0.0, 1.0]],
            [[0.0, 1.0], [1.0, 0.0]],
        ];
        Mdp::new(rewards, t, 0.9).unwrap()
    }

    fn huge_true_counts(env: &Mdp) -> TransitionCounts {
        // Concentrate mass on the true (deterministic) successors.
        let n = env.n_states();
        let a = env.n_actions();
        let mut counts = TransitionCounts::zeros(n, a);
        for s in 0..n {
            for k in 0..a {
                let row = env.transition_row(s, k);
                let j = row.iter().position(|&p| p == 1.0).unwrap();
                counts.add(s, k, j, 1_000_000_000);
            }
        }
        counts
    }

    #[test]
    fn preseeded_counts_reproduce_standard_trajectory() {
        let env = two_state();
        let mut cfg = QLearnConfig::new(50, 40, 7);
        cfg.initial_counts = Some(huge_true_counts(&env));
        let regularized = q_learning_regularized(&env, &cfg).unwrap();
        let standard = q_learning_baseline(&env, &cfg, BaselineMode::Standard).unwrap();
        assert_eq!(regularized.q.values(), standard.q.values());
        assert_eq!(regularized.episode_rewards, standard.episode_rewards);
        assert_eq!(regularized.sim_steps, 0);
    }

    #[test]
    fn constant_prob_zero_is_standard() {
        let env = two_state();
        let cfg = QLearnConfig::new(30, 25, 3);
        let standard = q_learning_baseline(&env, &cfg, BaselineMode::Standard).unwrap();
        let constant = q_learning_baseline(&env, &cfg, BaselineMode::ConstantProb(0.0)).unwrap();
        assert_eq!(standard.q.values(), constant.q.values());
        assert_eq!(standard.episode_rewards, constant.episode_rewards);
    }

    #[test]
    fn constant_prob_one_alternates_with_cap() {
        let env = two_state();
        let mut cfg = QLearnConfig::new(2, 5, 11);
        cfg.sim_cap = 4;
        let out = q_learning_baseline(&env, &cfg, BaselineMode::ConstantProb(1.0)).unwrap();
        // Every real step is preceded by exactly sim_cap simulated updates.
        assert_eq!(out.real_steps, 2 * 5);
        assert_eq!(out.sim_steps, 4 * out.real_steps);
    }

    #[test]
    fn first_visit_uses_c_zero_convention() {
        let env = two_state();
        let mut cfg = QLearnConfig::new(1, 1, 5);
        cfg.sim_cap = 7;
        let out = q_learning_regularized(&env, &cfg).unwrap();
        // The single real step was forced after sim_cap simulated updates on
        // the unvisited pair (eps* = 1 at c = 0).
        assert_eq!(out.real_steps, 1);
        assert_eq!(out.sim_steps, 7);
    }

    #[test]
    fn step_counter_counts_real_steps_only() {
        let env = two_state();
        let mut cfg = QLearnConfig::new(6, 17, 9);
        cfg.sim_cap = 3;
        let out = q_learning_regularized(&env, &cfg).unwrap();
        assert_eq!(out.real_steps, 6 * 17);
    }

    #[test]
    fn converges_to_value_iteration_q_on_deterministic_mdp() {
        let env = two_state();
        let oracle = value_iteration(&env, 1e-12, 1_000_000).unwrap();
        let mut cfg = QLearnConfig::new(400, 60, 123);
        cfg.step_size = 0.5;
        cfg.behavior_exploration = 0.2;
        for learner in [
            q_learning_regularized(&env, &cfg).unwrap(),
            q_learning_baseline(&env, &cfg, BaselineMode::Standard).unwrap(),
        ] {
            let mut max_err = 0.0f64;
            for s in 0..2 {
                for a in 0..2 {
                    max_err = max_err.max((learner.q.get(s, a) - oracle.q.get(s, a)).abs());
                }
            }
            assert!(max_err < 0.05, "max |Q - Q*| = {max_err}");
            assert_eq!(learner.greedy().actions(), oracle.policy.actions());
        }
    }

    #[test]
    fn rejects_bad_config() {
        let env = two_state();
        let mut cfg = QLearnConfig::new(1, 1, 0);
        cfg.step_size = 0.0;
        assert!(q_learning_regularized(&env, &cfg).is_err());
        let mut cfg = QLearnConfig::new(1, 1, 0);
        cfg.sim_cap = 0;
        assert!(q_learning_regularized(&env, &cfg).is_err());
        let cfg = QLearnConfig::new(1, 1, 0);
        assert!(q_learning_baseline(&env, &cfg, BaselineMode::ConstantProb(1.5)).is_err());
    }
}
