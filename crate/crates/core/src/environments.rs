//! The paper's tabular environments: the 10-state random chain, River Swim,
//! the Strens Loop, and the controlled stay/leave loop with tunable
//! transition stochasticity and action similarity.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::Mdp;

pub const DEFAULT_GAMMA: f64 = 0.99;

const RANDOM_CHAIN_STATES: usize = 10;
const RANDOM_CHAIN_ACTIONS: usize = 2;
const RANDOM_CHAIN_SUCCESSORS: usize = 5;

const RIVER_SWIM_STATES: usize = 6;
pub const RIVER_LEFT: usize = 0;
pub const RIVER_RIGHT: usize = 1;

const LOOP_STATES: usize = 9;
const CONTROLLED_LOOP_STATES: usize = 10;
const CONTROLLED_LOOP_REWARD_STATES: [usize; 3] = [7, 8, 9];

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

/// 10-state, 2-action random chain: per `(s, a)`, exactly five distinct
/// successors get probability mass drawn Uniform[0,1] and normalized;
/// rewards are Uniform[0,1]. Deterministic given the seed.
pub fn make_random_chain(seed: u64, gamma: f64) -> Result<Mdp> {
    let n = RANDOM_CHAIN_STATES;
    let a = RANDOM_CHAIN_ACTIONS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Array3::<f64>::zeros((n, a, n));
    let mut rewards = Array2::<f64>::zeros((n, a));
    for s in 0..n {
        for k in 0..a {
            // Partial Fisher-Yates pick of 5 distinct successor states.
            let mut idx: Vec<usize> = (0..n).collect();
            for i in 0..RANDOM_CHAIN_SUCCESSORS {
                let j = rng.gen_range(i..n);
                idx.swap(i, j);
            }
            let mut weights = [0.0f64; RANDOM_CHAIN_SUCCESSORS];
            let mut total = 0.0;
            for w in &mut weights {
                let mut draw = rng.gen::<f64>();
                while draw == 0.0 {
                    draw = rng.gen::<f64>();
                }
                *w = draw;
                total += draw;
            }
            for (i, &j) in idx.iter().take(RANDOM_CHAIN_SUCCESSORS).enumerate() {
                transitions[[s, k, j]] = weights[i] / total;
            }
            rewards[[s, k]] = rng.gen::<f64>();
        }
    }
    Mdp::new(rewards, transitions, gamma)
}

/// River Swim probabilities and rewards. The paper fixes only the structure
/// (six states, deterministic swim left, a weak current fought by the right
/// action, small reward at the left bank and large at the right), so every
/// number is adjustable here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiverSwimParams {
    /// Interior states, action right: probability of actually moving right.
    pub right_success: f64,
    /// Interior states, action right: probability of staying put.
    pub right_stay: f64,
    /// Interior states, action right: probability of drifting left.
    pub right_drift: f64,
    /// Leftmost state, action right: probability of moving right
    /// (stays otherwise).
    pub right_success_at_left_end: f64,
    /// Rightmost state, action right: probability of staying
    /// (drifts left otherwise).
    pub right_stay_at_right_end: f64,
    /// Reward for swimming left at the leftmost state.
    pub reward_left: f64,
    /// Reward for swimming right at the rightmost state.
    pub reward_right: f64,
}

impl Default for RiverSwimParams {
    fn default() -> Self {
        Self {
            right_success: 0.3,
            right_stay: 0.6,
            right_drift: 0.1,
            right_success_at_left_end: 0.3,
            right_stay_at_right_end: 0.7,
            reward_left: 5.0 / 1000.0,
            reward_right: 1.0,
        }
    }
}

/// Six-state River Swim: action 0 swims left deterministically (floored at
/// the left bank), action 1 swims right against the current.
pub fn make_river_swim(params: &RiverSwimParams, gamma: f64) -> Result<Mdp> {
    let n = RIVER_SWIM_STATES;
    let p = params;
    for (name, v) in [
        ("right_success", p.right_success),
        ("right_stay", p.right_stay),
        ("right_drift", p.right_drift),
        ("right_success_at_left_end", p.right_success_at_left_end),
        ("right_stay_at_right_end", p.right_stay_at_right_end),
    ] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidParameter(format!(
                "river swim {name} must lie in [0, 1], got {v}"
            )));
        }
    }
    if (p.right_success + p.right_stay + p.right_drift - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter(
            "interior right-action probabilities must sum to 1".into(),
        ));
    }
    if !p.reward_left.is_finite() || !p.reward_right.is_finite() {
        return Err(Error::InvalidParameter("river swim rewards must be finite".into()));
    }

    let mut t = Array3::<f64>::zeros((n, 2, n));
    let mut r = Array2::<f64>::zeros((n, 2));
    for s in 0..n {
        // Swim left: deterministic, floored at state 0.
        t[[s, RIVER_LEFT, s.saturating_sub(1)]] = 1.0;
        // Swim right against the current.
        if s == 0 {
            t[[s, RIVER_RIGHT, 1]] = p.right_success_at_left_end;
            t[[s, RIVER_RIGHT, 0]] = 1.0 - p.right_success_at_left_end;
        } else if s == n - 1 {
            t[[s, RIVER_RIGHT, s]] = p.right_stay_at_right_end;
            t[[s, RIVER_RIGHT, s - 1]] = 1.0 - p.right_stay_at_right_end;
        } else {
            t[[s, RIVER_RIGHT, s + 1]] = p.right_success;
            t[[s, RIVER_RIGHT, s]] = p.right_stay;
            t[[s, RIVER_RIGHT, s - 1]] = p.right_drift;
        }
    }
    r[[0, RIVER_LEFT]] = p.reward_left;
    r[[n - 1, RIVER_RIGHT]] = p.reward_right;
    Mdp::new(r, t, gamma)
}

/// Strens Loop: nine states forming two five-state loops joined at the hub
/// (state 0). Right loop 0-1-2-3-4 pays 1 on re-entering the hub; left loop
/// 0-5-6-7-8 pays 2. Action `a` enters/advances the right loop; action `b`
/// enters/advances the left loop; the right loop cannot be exited mid-loop.
///
/// With `action_a_resets_left_loop` unset (the default), action `a` from a
/// left-loop state advances toward the hub along the loop; set, it aborts
/// the left loop straight back to the hub (and forfeits the +2 edge), so
/// the +2 takes a committed run of `b` choices. Both are defensible
/// readings of the original figure.
///
/// `slip` mixes the desired action with a uniformly random one: the desired
/// row executes with probability `1 - slip/2` for two actions.
pub fn make_strens_loop_with(slip: f64, action_a_resets_left_loop: bool, gamma: f64) -> Result<Mdp> {
    if !(0.0..=1.0).contains(&slip) {
        return Err(Error::InvalidParameter(format!(
            "slip must lie in [0, 1], got {slip}"
        )));
    }
    let n = LOOP_STATES;
    let next_a = |s: usize| -> usize {
        match s {
            0 => 1,
            1..=3 => s + 1,
            4 => 0,
            5..=7 => {
                if action_a_resets_left_loop {
                    0
                } else {
                    s + 1
                }
            }
            _ => 0, // state 8 re-enters the hub either way
        }
    };
    let next_b = |s: usize| -> usize {
        match s {
            0 => 5,
            1..=3 => s + 1, // right loop cannot be exited
            4 => 0,
            5..=7 => s + 1,
            _ => 0,
        }
    };

    let mut desired = Array3::<f64>::zeros((n, 2, n));
    for s in 0..n {
        desired[[s, 0, next_a(s)]] = 1.0;
        desired[[s, 1, next_b(s)]] = 1.0;
    }
    let mut t = Array3::<f64>::zeros((n, 2, n));
    for s in 0..n {
        for k in 0..2 {
            let other = 1 - k;
            for j in 0..n {
                t[[s, k, j]] =
                    (1.0 - slip / 2.0) * desired[[s, k, j]] + (slip / 2.0) * desired[[s, other, j]];
            }
        }
    }
    let mut r = Array2::<f64>::zeros((n, 2));
    // Hub re-entry rewards sit on the rewarded edges of the figure: both
    // actions from state 4 complete the right loop; only `b` completes the
    // left loop when `a` aborts it (when `a` merely advances, it traverses
    // the same +2 edge from state 8 and pays the same).
    r[[4, 0]] = 1.0;
    r[[4, 1]] = 1.0;
    r[[8, 1]] = 2.0;
    if !action_a_resets_left_loop {
        r[[8, 0]] = 2.0;
    }
    Mdp::new(r, t, gamma)
}

pub fn make_strens_loop(slip: f64, gamma: f64) -> Result<Mdp> {
    make_strens_loop_with(slip, false, gamma)
}

/// Controlled ten-state loop with two axes: transition stochasticity `kappa`
/// (leave matrix from uniform to deterministic next-state) and action
/// similarity `lambda` (0 distinct actions, 0.5 identical). Reward 1 in
/// states 7-9, 0 elsewhere.
pub fn make_controlled_loop(kappa: f64, lambda: f64, gamma: f64) -> Result<Mdp> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidParameter(format!(
            "kappa must lie in [0, 1], got {kappa}"
        )));
    }
    if !(0.0..=0.5).contains(&lambda) {
        return Err(Error::InvalidParameter(format!(
            "lambda must lie in [0, 0.5], got {lambda}"
        )));
    }
    let n = CONTROLLED_LOOP_STATES;
    let unif = 1.0 / n as f64;
    let mut leave = Array2::<f64>::zeros((n, n));
    let mut stay = Array2::<f64>::zeros((n, n));
    for s in 0..n {
        for j in 0..n {
            let det = if j == (s + 1) % n { 1.0 } else { 0.0 };
            leave[[s, j]] = kappa * det + (1.0 - kappa) * unif;
            let ident = if j == s { 1.0 } else { 0.0 };
            stay[[s, j]] = 0.75 * ident + 0.25 * unif;
        }
    }
    let mut t = Array3::<f64>::zeros((n, 2, n));
    for s in 0..n {
        for j in 0..n {
            t[[s, 0, j]] = (1.0 - lambda) * stay[[s, j]] + lambda * leave[[s, j]];
            t[[s, 1, j]] = (1.0 - lambda) * leave[[s, j]] + lambda * stay[[s, j]];
        }
    }
    let mut r = Array2::<f64>::zeros((n, 2));
    for s in CONTROLLED_LOOP_REWARD_STATES {
        r[[s, 0]] = 1.0;
        r[[s, 1]] = 1.0;
    }
    Mdp::new(r, t, gamma)
}

/// Declarative environment choice, serializable into the experiment config
/// format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    RandomChain {
        #[serde(default)]
        seed: u64,
    },
    RiverSwim {
        #[serde(flatten)]
        params: RiverSwimParams,
    },
    StrensLoop {
        #[serde(default = "default_slip")]
        slip: f64,
        #[serde(default)]
        action_a_resets_left_loop: bool,
    },
    ControlledLoop {
        kappa: f64,
        lambda: f64,
    },
}

fn default_slip() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(flatten)]
    pub kind: EnvKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

impl EnvSpec {
    pub fn random_chain(seed: u64) -> Self {
        Self {
            kind: EnvKind::RandomChain { seed },
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn river_swim() -> Self {
        Self {
            kind: EnvKind::RiverSwim {
                params: RiverSwimParams::default(),
            },
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn strens_loop(slip: f64) -> Self {
        Self {
            kind: EnvKind::StrensLoop {
                slip,
                action_a_resets_left_loop: false,
            },
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn controlled_loop(kappa: f64, lambda: f64) -> Self {
        Self {
            kind: EnvKind::ControlledLoop { kappa, lambda },
            gamma: DEFAULT_GAMMA,
        }
    }

    pub fn id(&self) -> &'static str {
        match self.kind {
            EnvKind::RandomChain { .. } => "random_chain",
            EnvKind::RiverSwim { .. } => "river_swim",
            EnvKind::StrensLoop { .. } => "strens_loop",
            EnvKind::ControlledLoop { .. } => "controlled_loop",
        }
    }

    /// The random chain is a distribution over MDPs; sweeps draw a fresh one
    /// per replicate. The fixed environments do not resample.
    pub fn resamples_per_replicate(&self) -> bool {
        matches!(self.kind, EnvKind::RandomChain { .. })
    }

    pub fn build(&self) -> Result<Mdp> {
        match &self.kind {
            EnvKind::RandomChain { seed } => make_random_chain(*seed, self.gamma),
            _ => self.build_seeded(0),
        }
    }

    /// Builds the environment, overriding the chain seed (no-op for the
    /// fixed environments).
    pub fn build_seeded(&self, seed: u64) -> Result<Mdp> {
        match &self.kind {
            EnvKind::RandomChain { .. } => make_random_chain(seed, self.gamma),
            EnvKind::RiverSwim { params } => make_river_swim(params, self.gamma),
            EnvKind::StrensLoop {
                slip,
                action_a_resets_left_loop,
            } => make_strens_loop_with(*slip, *action_a_resets_left_loop, self.gamma),
            EnvKind::ControlledLoop { kappa, lambda } => {
                make_controlled_loop(*kappa, *lambda, self.gamma)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate_policy, value_iteration, Policy};
    use approx::assert_abs_diff_eq;

    #[test]
    fn random_chain_has_exactly_five_successor_states() {
        for seed in 0..1000u64 {
            let mdp = make_random_chain(seed, 0.99).unwrap();
            for s in 0..10 {
                for a in 0..2 {
                    let row = mdp.transition_row(s, a);
                    let nonzero = row.iter().filter(|&&p| p > 0.0).count();
                    assert_eq!(nonzero, 5, "seed {seed} row ({s},{a})");
                    assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
                    assert!(mdp.rewards()[[s, a]] >= 0.0 && mdp.rewards()[[s, a]] <= 1.0);
                }
            }
        }
    }

    #[test]
    fn random_chain_deterministic_by_seed() {
        let a = make_random_chain(17, 0.99).unwrap();
        let b = make_random_chain(17, 0.99).unwrap();
        assert_eq!(a.transitions(), b.transitions());
        assert_eq!(a.rewards(), b.rewards());
        let c = make_random_chain(18, 0.99).unwrap();
        assert_ne!(a.transitions(), c.transitions());
    }

    #[test]
    fn river_swim_structure() {
        let mdp = make_river_swim(&RiverSwimParams::default(), 0.99).unwrap();
        assert_eq!(mdp.n_states(), 6);
        assert_eq!(mdp.n_actions(), 2);
        for s in 0..6 {
            for a in 0..2 {
                assert!(mdp.is_row_stochastic(s, a));
            }
        }
        // Swim left from state 3 reaches state 2 with probability 1.
        assert_abs_diff_eq!(mdp.transitions()[[3, RIVER_LEFT, 2]], 1.0, epsilon = 0.0);
        assert_abs_diff_eq!(mdp.rewards()[[0, RIVER_LEFT]], 0.005, epsilon = 1e-15);
        assert_abs_diff_eq!(mdp.rewards()[[5, RIVER_RIGHT]], 1.0, epsilon = 0.0);
    }

    #[test]
    fn river_swim_optimal_policy_is_all_right() {
        // Exhaustive oracle: evaluate all 2^6 deterministic policies exactly
        // and keep the one with the highest mean value.
        let mdp = make_river_swim(&RiverSwimParams::default(), 0.99).unwrap();
        let mut best_mean = f64::NEG_INFINITY;
        let mut best_actions = Vec::new();
        for bits in 0..(1u32 << 6) {
            let actions: Vec<usize> = (0..6).map(|s| ((bits >> s) & 1) as usize).collect();
            let policy = Policy::new(actions.clone(), 2).unwrap();
            let v = evaluate_policy(&mdp, &policy).unwrap();
            let mean = v.values().mean().unwrap();
            if mean > best_mean {
                best_mean = mean;
                best_actions = actions;
            }
        }
        assert_eq!(best_actions, vec![RIVER_RIGHT; 6]);
        let vi = value_iteration(&mdp, 1e-10, 100_000).unwrap();
        assert_eq!(vi.policy.actions(), &best_actions[..]);
    }

    #[test]
    fn river_swim_rejects_bad_probabilities() {
        let params = RiverSwimParams {
            right_success: 0.5,
            right_stay: 0.6,
            right_drift: 0.1,
            ..RiverSwimParams::default()
        };
        assert!(make_river_swim(&params, 0.99).is_err());
    }

    #[test]
    fn strens_loop_slip_zero_is_deterministic() {
        let mdp = make_strens_loop(0.0, 0.99).unwrap();
        for s in 0..9 {
            for a in 0..2 {
                let row = mdp.transition_row(s, a);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn strens_loop_half_slip_mixes_rows() {
        let slipped = make_strens_loop(0.5, 0.99).unwrap();
        let det = make_strens_loop(0.0, 0.99).unwrap();
        for s in 0..9 {
            for a in 0..2 {
                for j in 0..9 {
                    let expect = 0.75 * det.transitions()[[s, a, j]]
                        + 0.25 * det.transitions()[[s, 1 - a, j]];
                    assert_abs_diff_eq!(slipped.transitions()[[s, a, j]], expect, epsilon = 1e-15);
                }
            }
        }
    }

    #[test]
    fn strens_loop_rewards_are_zero_one_two() {
        let mdp = make_strens_loop(0.5, 0.99).unwrap();
        assert_eq!(mdp.n_states(), 9);
        for s in 0..9 {
            for a in 0..2 {
                let r = mdp.rewards()[[s, a]];
                assert!(r == 0.0 || r == 1.0 || r == 2.0);
            }
        }
        assert_eq!(mdp.rewards()[[4, 0]], 1.0);
        assert_eq!(mdp.rewards()[[8, 1]], 2.0);
    }

    #[test]
    fn strens_loop_left_loop_variants() {
        // Default: action a advances the left loop toward the hub like b.
        let mdp = make_strens_loop(0.0, 0.99).unwrap();
        for s in 5..8 {
            assert_eq!(mdp.transitions()[[s, 0, s + 1]], 1.0);
        }
        assert_eq!(mdp.rewards()[[8, 0]], 2.0);
        // Abort variant: a jumps straight back to the hub, unrewarded.
        let reset = make_strens_loop_with(0.0, true, 0.99).unwrap();
        for s in 5..8 {
            assert_eq!(reset.transitions()[[s, 0, 0]], 1.0);
        }
        assert_eq!(reset.rewards()[[8, 0]], 0.0);
    }

    #[test]
    fn controlled_loop_identical_actions_at_half_lambda() {
        let mdp = make_controlled_loop(0.7, 0.5, 0.99).unwrap();
        for s in 0..10 {
            for j in 0..10 {
                assert_abs_diff_eq!(
                    mdp.transitions()[[s, 0, j]],
                    mdp.transitions()[[s, 1, j]],
                    epsilon = 1e-15
                );
            }
        }
    }

    #[test]
    fn controlled_loop_deterministic_leave() {
        let mdp = make_controlled_loop(1.0, 0.0, 0.99).unwrap();
        for s in 0..10 {
            assert_abs_diff_eq!(mdp.transitions()[[s, 1, (s + 1) % 10]], 1.0, epsilon = 1e-15);
        }
        let flat = make_controlled_loop(0.0, 0.0, 0.99).unwrap();
        for s in 0..10 {
            for j in 0..10 {
                assert_abs_diff_eq!(flat.transitions()[[s, 1, j]], 0.1, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn controlled_loop_lambda_symmetry_swaps_actions() {
        // Action 1 mixes (stay, leave) with weights (1-lambda, lambda) and
        // action 2 mixes them the other way round, so swapping lambda for
        // 1 - lambda in the mixture formula exchanges the two actions.
        let kappa = 0.6;
        let ind = |p: bool| if p { 1.0 } else { 0.0 };
        let stay = move |s: usize, j: usize| 0.75 * ind(j == s) + 0.25 * 0.1;
        let leave =
            move |s: usize, j: usize| kappa * ind(j == (s + 1) % 10) + (1.0 - kappa) * 0.1;
        for &lambda in &[0.0, 0.1, 0.25] {
            let mdp = make_controlled_loop(kappa, lambda, 0.99).unwrap();
            for s in 0..10 {
                for j in 0..10 {
                    let a1 = (1.0 - lambda) * stay(s, j) + lambda * leave(s, j);
                    let a2 = (1.0 - lambda) * leave(s, j) + lambda * stay(s, j);
                    assert_abs_diff_eq!(mdp.transitions()[[s, 0, j]], a1, epsilon = 1e-12);
                    assert_abs_diff_eq!(mdp.transitions()[[s, 1, j]], a2, epsilon = 1e-12);
                    // The exchange: action 1 at mixture weight lambda equals
                    // action 2 at mixture weight 1 - lambda.
                    let a2_flipped = (1.0 - (1.0 - lambda)) * leave(s, j)
                        + (1.0 - lambda) * stay(s, j);
                    assert_abs_diff_eq!(a1, a2_flipped, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn env_spec_builds_and_round_trips() {
        let specs = [
            EnvSpec::random_chain(3),
            EnvSpec::river_swim(),
            EnvSpec::strens_loop(0.5),
            EnvSpec::controlled_loop(0.8, 0.1),
        ];
        for spec in &specs {
            let mdp = spec.build().unwrap();
            assert!(mdp.n_states() >= 6);
            for s in 0..mdp.n_states() {
                for a in 0..mdp.n_actions() {
                    assert!(
                        mdp.is_row_stochastic(s, a),
                        "{} row ({s},{a})",
                        spec.id()
                    );
                    assert_abs_diff_eq!(mdp.transition_row(s, a).sum(), 1.0, epsilon = 1e-12);
                }
            }
            let toml_str = toml::to_string(spec).unwrap();
            let back: EnvSpec = toml::from_str(&toml_str).unwrap();
            assert_eq!(spec, &back);
        }
    }
}
