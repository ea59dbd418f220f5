//! C ABI for the tabreg toolkit. Handles are opaque pointers owned by the
//! library (`tabreg_*_free` releases them); numeric results land in
//! caller-allocated buffers; every fallible call returns a status code and
//! leaves a message for `tabreg_last_error_message`. All functions are
//! panic-safe at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::{Array2, Array3};

use tabreg::config::{FileConfig, QlearnMode};
use tabreg::environments::{
    make_controlled_loop, make_random_chain, make_river_swim, make_strens_loop, RiverSwimParams,
};
use tabreg::error::Error;
use tabreg::estimation::{mle_estimate, uniform_tensor, zeros_tensor, TransitionCounts};
use tabreg::experiments::{
    export_results, export_traces, run_state_specific, run_sweep, sample_dataset, DatasetConfig,
    ExportFormat, LossRecord, SamplingMode,
};
use tabreg::mdp::{evaluate_policy, value_iteration, Mdp, Policy};
use tabreg::model_free::{q_learning_baseline, q_learning_regularized, BaselineMode, QLearnConfig};
use tabreg::regularizers::{apply_regularizer, RegularizerSpec};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabregStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument was out of range or inconsistent.
    InvalidArgument = 2,
    /// An MDP or tensor violated a structural invariant.
    InvalidModel = 3,
    /// A linear solve or iteration failed.
    NumericalFailure = 4,
    /// File I/O or config parsing failed.
    IoError = 5,
    /// The library caught a panic at the boundary.
    Panic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> TabregStatus {
    match err {
        Error::InvalidModel(_) => TabregStatus::InvalidModel,
        Error::InvalidParameter(_) | Error::UndefinedVariance(_) => TabregStatus::InvalidArgument,
        Error::NumericalFailure(_) => TabregStatus::NumericalFailure,
        Error::Config(_) | Error::Io { .. } => TabregStatus::IoError,
    }
}

fn catch(f: impl FnOnce() -> TabregStatus) -> TabregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic inside tabreg");
            TabregStatus::Panic
        }
    }
}

/// Message describing the most recent error on this thread. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tabreg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version string (static storage).
#[no_mangle]
pub extern "C" fn tabreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque MDP handle.
pub struct TabregMdp {
    inner: Mdp,
}

/// Opaque transition-counts handle.
pub struct TabregCounts {
    inner: TransitionCounts,
}

unsafe fn mdp_ref<'a>(ptr: *const TabregMdp) -> Option<&'a Mdp> {
    ptr.as_ref().map(|m| &m.inner)
}

unsafe fn counts_ref<'a>(ptr: *const TabregCounts) -> Option<&'a TransitionCounts> {
    ptr.as_ref().map(|c| &c.inner)
}

fn boxed_mdp(mdp: Mdp) -> *mut TabregMdp {
    Box::into_raw(Box::new(TabregMdp { inner: mdp }))
}

/// Builds an MDP from row-major `rewards[s*n_actions + a]` and
/// `transitions[(s*n_actions + a)*n_states + s_next]`.
///
/// # Safety
/// `rewards` must point to `n_states * n_actions` doubles and `transitions`
/// to `n_states * n_actions * n_states` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tabreg_mdp_new(
    n_states: usize,
    n_actions: usize,
    rewards: *const f64,
    transitions: *const f64,
    gamma: f64,
    out: *mut *mut TabregMdp,
) -> TabregStatus {
    catch(|| {
        if rewards.is_null() || transitions.is_null() || out.is_null() {
            set_error("null argument");
            return TabregStatus::NullArgument;
        }
        let r = std::slice::from_raw_parts(rewards, n_states * n_actions);
        let t = std::slice::from_raw_parts(transitions, n_states * n_actions * n_states);
        let rewards = match Array2::from_shape_vec((n_states, n_actions), r.to_vec()) {
            Ok(a) => a,
            Err(e) => {
                set_error(&e.to_string());
                return TabregStatus::InvalidArgument;
            }
        };
        let transitions =
            match Array3::from_shape_vec((n_states, n_actions, n_states), t.to_vec()) {
                Ok(a) => a,
                Err(e) => {
                    set_error(&e.to_string());
                    return TabregStatus::InvalidArgument;
                }
            };
        match Mdp::new(rewards, transitions, gamma) {
            Ok(mdp) => {
                *out = boxed_mdp(mdp);
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// # Safety
/// `mdp` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn tabreg_mdp_free(mdp: *mut TabregMdp) {
    if !mdp.is_null() {
        drop(Box::from_raw(mdp));
    }
}

/// # Safety
/// `mdp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabreg_mdp_n_states(mdp: *const TabregMdp) -> usize {
    mdp_ref(mdp).map_or(0, Mdp::n_states)
}

/// # Safety
/// `mdp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabreg_mdp_n_actions(mdp: *const TabregMdp) -> usize {
    mdp_ref(mdp).map_or(0, Mdp::n_actions)
}

/// # Safety
/// `mdp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabreg_mdp_gamma(mdp: *const TabregMdp) -> f64 {
    mdp_ref(mdp).map_or(f64::NAN, Mdp::gamma)
}

/// Six-state River Swim with the default parameterization.
#[no_mangle]
pub extern "C" fn tabreg_env_river_swim(gamma: f64) -> *mut TabregMdp {
    build_env(|| make_river_swim(&RiverSwimParams::default(), gamma))
}

/// Ten-state random chain drawn from the given seed.
#[no_mangle]
pub extern "C" fn tabreg_env_random_chain(seed: u64, gamma: f64) -> *mut TabregMdp {
    build_env(|| make_random_chain(seed, gamma))
}

/// Nine-state two-loop environment with the given slip probability.
#[no_mangle]
pub extern "C" fn tabreg_env_strens_loop(slip: f64, gamma: f64) -> *mut TabregMdp {
    build_env(|| make_strens_loop(slip, gamma))
}

/// Ten-state stay/leave loop with stochasticity `kappa` and action
/// similarity `lambda`.
#[no_mangle]
pub extern "C" fn tabreg_env_controlled_loop(kappa: f64, lambda: f64, gamma: f64) -> *mut TabregMdp {
    build_env(|| make_controlled_loop(kappa, lambda, gamma))
}

fn build_env(f: impl FnOnce() -> tabreg::Result<Mdp>) -> *mut TabregMdp {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(mdp)) => boxed_mdp(mdp),
        Ok(Err(e)) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
        Err(_) => {
            set_error("panic inside tabreg");
            ptr::null_mut()
        }
    }
}

/// Value iteration. Writes one value per state to `values_out` and one
/// greedy action index per state to `policy_out`.
///
/// # Safety
/// `values_out` and `policy_out` must each point to `n_states` elements.
#[no_mangle]
pub unsafe extern "C" fn tabreg_value_iteration(
    mdp: *const TabregMdp,
    tol: f64,
    max_iters: usize,
    values_out: *mut f64,
    policy_out: *mut usize,
) -> TabregStatus {
    catch(|| {
        let Some(mdp) = mdp_ref(mdp) else {
            set_error("null mdp handle");
            return TabregStatus::NullArgument;
        };
        if values_out.is_null() || policy_out.is_null() {
            set_error("null output buffer");
            return TabregStatus::NullArgument;
        }
        match value_iteration(mdp, tol, max_iters) {
            Ok(res) => {
                for s in 0..mdp.n_states() {
                    *values_out.add(s) = res.values.get(s);
                    *policy_out.add(s) = res.policy.action(s);
                }
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Exact policy evaluation by direct linear solve.
///
/// # Safety
/// `policy` and `values_out` must each point to `n_states` elements.
#[no_mangle]
pub unsafe extern "C" fn tabreg_evaluate_policy(
    mdp: *const TabregMdp,
    policy: *const usize,
    values_out: *mut f64,
) -> TabregStatus {
    catch(|| {
        let Some(mdp) = mdp_ref(mdp) else {
            set_error("null mdp handle");
            return TabregStatus::NullArgument;
        };
        if policy.is_null() || values_out.is_null() {
            set_error("null argument");
            return TabregStatus::NullArgument;
        }
        let actions = std::slice::from_raw_parts(policy, mdp.n_states()).to_vec();
        let policy = match Policy::new(actions, mdp.n_actions()) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return TabregStatus::InvalidArgument;
            }
        };
        match evaluate_policy(mdp, &policy) {
            Ok(v) => {
                for s in 0..mdp.n_states() {
                    *values_out.add(s) = v.get(s);
                }
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Mean value gap of `policy` against the optimal policy, both evaluated
/// exactly in `true_mdp`.
///
/// # Safety
/// `policy` must point to `n_states` action indices; `loss_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tabreg_compute_loss(
    true_mdp: *const TabregMdp,
    policy: *const usize,
    loss_out: *mut f64,
) -> TabregStatus {
    catch(|| {
        let Some(mdp) = mdp_ref(true_mdp) else {
            set_error("null mdp handle");
            return TabregStatus::NullArgument;
        };
        if policy.is_null() || loss_out.is_null() {
            set_error("null argument");
            return TabregStatus::NullArgument;
        }
        let actions = std::slice::from_raw_parts(policy, mdp.n_states()).to_vec();
        let policy = match Policy::new(actions, mdp.n_actions()) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return TabregStatus::InvalidArgument;
            }
        };
        match tabreg::experiments::compute_loss(mdp, &policy) {
            Ok(loss) => {
                *loss_out = loss;
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Empty counts for an `n_states` x `n_actions` model.
#[no_mangle]
pub extern "C" fn tabreg_counts_new(n_states: usize, n_actions: usize) -> *mut TabregCounts {
    if n_states == 0 || n_actions == 0 {
        set_error("counts need at least one state and one action");
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(TabregCounts {
        inner: TransitionCounts::zeros(n_states, n_actions),
    }))
}

/// # Safety
/// `counts` must come from this library and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn tabreg_counts_free(counts: *mut TabregCounts) {
    if !counts.is_null() {
        drop(Box::from_raw(counts));
    }
}

/// Adds `k` observations of the transition `(s, a) -> s_next`.
///
/// # Safety
/// `counts` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn tabreg_counts_add(
    counts: *mut TabregCounts,
    s: usize,
    a: usize,
    s_next: usize,
    k: u64,
) -> TabregStatus {
    catch(|| {
        let Some(counts) = counts.as_mut() else {
            set_error("null counts handle");
            return TabregStatus::NullArgument;
        };
        let inner = &mut counts.inner;
        if s >= inner.n_states() || a >= inner.n_actions() || s_next >= inner.n_states() {
            set_error("count index out of range");
            return TabregStatus::InvalidArgument;
        }
        inner.add(s, a, s_next, k);
        TabregStatus::Ok
    })
}

/// Sampling modes for `tabreg_sample_dataset`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabregSampling {
    /// Each tuple draws (s, a) uniformly at random.
    UniformRandomSa = 0,
    /// Exactly n_tuples / (N * |A|) tuples per pair.
    EqualPerSa = 1,
}

/// Draws a batch dataset from the model and returns its counts.
///
/// # Safety
/// `mdp` must be live; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tabreg_sample_dataset(
    mdp: *const TabregMdp,
    n_tuples: usize,
    mode: TabregSampling,
    seed: u64,
    out: *mut *mut TabregCounts,
) -> TabregStatus {
    catch(|| {
        let Some(mdp) = mdp_ref(mdp) else {
            set_error("null mdp handle");
            return TabregStatus::NullArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return TabregStatus::NullArgument;
        }
        let cfg = DatasetConfig {
            n_tuples,
            sampling_mode: match mode {
                TabregSampling::UniformRandomSa => SamplingMode::UniformRandomSa,
                TabregSampling::EqualPerSa => SamplingMode::EqualPerSa,
            },
            seed,
        };
        match sample_dataset(mdp, &cfg) {
            Ok(counts) => {
                *out = Box::into_raw(Box::new(TabregCounts { inner: counts }));
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Regularization methods exposed over the C ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TabregMethod {
    /// Plan with the MLE at discount `param` (the planning discount).
    DiscountReg = 0,
    /// `(1-param) * T_mle + param * T_zeros` at the template's discount.
    ZerosAverage = 1,
    /// Uniform Dirichlet prior with fixed magnitude `param` (sum of row
    /// parameters) for all pairs.
    UniformPriorMagnitude = 2,
    /// Uniform prior weighted per pair by the analytic eps*.
    StateActionSpecificUniform = 3,
    /// Epsilon-greedy regularization with weight `param`.
    EpsGreedy = 4,
}

/// Builds the planning MDP for a method: transitions estimated from
/// `counts`, regularized, with rewards copied from `template`. The meaning
/// of `param` depends on the method; it is ignored for the state-action-
/// specific method.
///
/// # Safety
/// `counts` and `template` must be live handles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tabreg_apply_regularizer(
    method: TabregMethod,
    param: f64,
    counts: *const TabregCounts,
    template: *const TabregMdp,
    out: *mut *mut TabregMdp,
) -> TabregStatus {
    catch(|| {
        let (Some(counts), Some(template)) = (counts_ref(counts), mdp_ref(template)) else {
            set_error("null handle");
            return TabregStatus::NullArgument;
        };
        if out.is_null() {
            set_error("null output pointer");
            return TabregStatus::NullArgument;
        }
        let n = template.n_states();
        let a = template.n_actions();
        let spec = match method {
            TabregMethod::DiscountReg => RegularizerSpec::DiscountReg { gamma_p: param },
            TabregMethod::ZerosAverage => RegularizerSpec::WeightedPrior {
                t_reg: zeros_tensor(n, a),
                eps: param,
            },
            TabregMethod::UniformPriorMagnitude => RegularizerSpec::FixedMagnitudePrior {
                t_reg: uniform_tensor(n, a),
                magnitude: param,
            },
            TabregMethod::StateActionSpecificUniform => {
                RegularizerSpec::StateActionSpecificUniform
            }
            TabregMethod::EpsGreedy => RegularizerSpec::EpsGreedy { eps: param },
        };
        match apply_regularizer(&spec, counts, template) {
            Ok(mdp) => {
                *out = boxed_mdp(mdp);
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Per-pair MSE-minimizing weights (analytic, MLE plug-in), written row-major
/// to `eps_out[s * n_actions + a]`.
///
/// # Safety
/// `eps_out` must point to `n_states * n_actions` doubles.
#[no_mangle]
pub unsafe extern "C" fn tabreg_eps_star_uniform(
    counts: *const TabregCounts,
    eps_out: *mut f64,
) -> TabregStatus {
    catch(|| {
        let Some(counts) = counts_ref(counts) else {
            set_error("null counts handle");
            return TabregStatus::NullArgument;
        };
        if eps_out.is_null() {
            set_error("null output buffer");
            return TabregStatus::NullArgument;
        }
        let mle = mle_estimate(counts);
        let field = tabreg::regularizers::eps_star_uniform(&mle.probs, counts);
        let a = counts.n_actions();
        for s in 0..counts.n_states() {
            for k in 0..a {
                *eps_out.add(s * a + k) = field.get(s, k);
            }
        }
        TabregStatus::Ok
    })
}

/// The weighted-average weight equivalent to planning with `gamma_p`:
/// `(gamma - gamma_p) / gamma`.
///
/// # Safety
/// `eps_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tabreg_discount_to_eps(
    gamma: f64,
    gamma_p: f64,
    eps_out: *mut f64,
) -> TabregStatus {
    catch(|| {
        if eps_out.is_null() {
            set_error("null output buffer");
            return TabregStatus::NullArgument;
        }
        match tabreg::regularizers::discount_to_eps(gamma, gamma_p) {
            Ok(eps) => {
                *eps_out = eps;
                TabregStatus::Ok
            }
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Runs the sweep described by a TOML config file (the CLI's `sweep`
/// command) and writes results to `out_path` as CSV or JSON.
///
/// # Safety
/// `config_path` and `out_path` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tabreg_run_sweep_file(
    config_path: *const c_char,
    out_path: *const c_char,
    json: bool,
) -> TabregStatus {
    catch(|| {
        let (Some(config_path), Some(out_path)) = (cstr(config_path), cstr(out_path)) else {
            set_error("null or non-UTF-8 path");
            return TabregStatus::NullArgument;
        };
        let run = || -> tabreg::Result<usize> {
            let file = FileConfig::load(Path::new(&config_path))?;
            let cfg = file.to_sweep_config(None)?;
            let mut records: Vec<LossRecord> = Vec::new();
            if cfg.methods.iter().any(|m| !m.is_state_specific()) {
                records.extend(run_sweep(&cfg)?.records);
            }
            if cfg.methods.iter().any(|m| m.is_state_specific()) {
                records.extend(run_state_specific(&cfg)?.records);
            }
            let format = if json { ExportFormat::Json } else { ExportFormat::Csv };
            export_results(&records, Some(&cfg), Path::new(&out_path), format)?;
            Ok(records.len())
        };
        match run() {
            Ok(_) => TabregStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Runs Q-learning from a TOML config (the CLI's `qlearn` command) and
/// writes per-episode reward traces to `out_path` as CSV.
///
/// # Safety
/// `config_path` and `out_path` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tabreg_run_qlearn_file(
    config_path: *const c_char,
    out_path: *const c_char,
) -> TabregStatus {
    catch(|| {
        let (Some(config_path), Some(out_path)) = (cstr(config_path), cstr(out_path)) else {
            set_error("null or non-UTF-8 path");
            return TabregStatus::NullArgument;
        };
        let run = || -> tabreg::Result<()> {
            let file = FileConfig::load(Path::new(&config_path))?;
            let (base_cfg, mode, n_runs) = file.to_qlearn(None)?;
            let env = file.env.build()?;
            let mut records = Vec::new();
            for run_idx in 0..n_runs as u64 {
                let cfg = QLearnConfig {
                    seed: tabreg::experiments::derive_seed(base_cfg.seed, 17, run_idx),
                    ..base_cfg.clone()
                };
                let result = match mode {
                    QlearnMode::Regularized => q_learning_regularized(&env, &cfg)?,
                    QlearnMode::Baseline(b) => q_learning_baseline(&env, &cfg, b)?,
                };
                for (episode, reward) in result.episode_rewards.iter().enumerate() {
                    records.push(LossRecord {
                        env: file.env.id().to_string(),
                        method: match mode {
                            QlearnMode::Regularized => "qlearn_regularized",
                            QlearnMode::Baseline(BaselineMode::Standard) => "qlearn_standard",
                            QlearnMode::Baseline(BaselineMode::ConstantProb(_)) => {
                                "qlearn_constant_prob"
                            }
                        }
                        .to_string(),
                        param_name: "episode".to_string(),
                        param_value: Some(episode as f64),
                        replicate: run_idx,
                        loss: *reward,
                    });
                }
            }
            export_traces(&records, Path::new(&out_path))
        };
        match run() {
            Ok(()) => TabregStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

unsafe fn cstr(ptr: *const c_char) -> Option<String> {
    if ptr.is_null() {
        return None;
    }
    CStr::from_ptr(ptr).to_str().ok().map(str::to_owned)
}
