//! Euler–Maruyama discretisation of the four-dimensional system, seeded
//! replicate ensembles and ensemble statistics.
//!
//! The update is the explicit scheme `X' = X + mu dt + sigma dW` applied in
//! internal component order `(beta, S, I, R)`, followed by a floor clamp that
//! keeps every component at or above `state_floor`; clamp applications are
//! counted and reported rather than hidden. Gaussian increments come from the
//! counter-based stream in [`crate::rng`], keyed by
//! `(seed, replicate, step, component)`, so an ensemble is reproducible
//! bit-for-bit regardless of scheduling or thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control;
use crate::error::{Error, Result};
use crate::model::{self, Controls, ModelParams, StateVector};
use crate::rng;

/// How controls are chosen along a path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    /// The same control pair at every step.
    Fixed(Controls),
    /// Closed-form lock-down and vaccination feedback evaluated at
    /// `(t_k, X_k)` and clamped into `[0, 1]` before each step.
    OptimalFeedback,
    /// Piecewise-constant controls from a `(time, controls)` table; each step
    /// uses the entry with the largest time not exceeding the current time.
    Schedule(Vec<(f64, Controls)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub t_end: f64,
    pub n_steps: usize,
    pub n_replicates: usize,
    pub seed: u64,
    pub state_floor: f64,
    pub control_mode: ControlMode,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            t_end: 1.0,
            n_steps: 1000,
            n_replicates: 100,
            seed: 42,
            state_floor: 1e-8,
            control_mode: ControlMode::OptimalFeedback,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_steps < 1 {
            return Err(Error::InvalidArgument {
                name: "n_steps",
                reason: "must be >= 1".into(),
            });
        }
        if !(self.t_end > 0.0) {
            return Err(Error::InvalidArgument {
                name: "t_end",
                reason: format!("must be > 0, got {}", self.t_end),
            });
        }
        if !(self.state_floor > 0.0) {
            return Err(Error::InvalidArgument {
                name: "state_floor",
                reason: format!("must be > 0, got {}", self.state_floor),
            });
        }
        if self.n_replicates < 1 {
            return Err(Error::InvalidArgument {
                name: "n_replicates",
                reason: "must be >= 1".into(),
            });
        }
        Ok(())
    }
}

/// One discretised trajectory on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPath {
    /// `n_steps + 1` grid times `t0 + k dt`.
    pub times: Vec<f64>,
    /// States at the grid times.
    pub states: Vec<StateVector>,
    /// Controls applied on each step (length `n_steps`).
    pub controls: Vec<Controls>,
    /// Number of component clamps applied across all steps.
    pub clamp_events: u64,
}

impl SimPath {
    pub fn terminal(&self) -> &StateVector {
        self.states.last().expect("paths are never empty")
    }
}

/// A seeded collection of replicate trajectories.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub paths: Vec<SimPath>,
    pub config: SimConfig,
    pub params: ModelParams,
}

/// One explicit Euler–Maruyama step.
///
/// `dw` holds the four Brownian increments (each `N(0, dt)`) in internal
/// order `(beta, S, I, R)`. Returns the clamped next state together with the
/// number of components that hit `state_floor`.
pub fn step_euler_maruyama(
    t: f64,
    state: &StateVector,
    u: &Controls,
    params: &ModelParams,
    dt: f64,
    dw: &[f64; 4],
    state_floor: f64,
) -> Result<(StateVector, u32)> {
    let mu = model::drift_internal(t, state, u, params)?;
    let sig = model::diffusion_diag_internal(state, params);
    let x = state.to_internal();
    let mut next = [0.0; 4];
    for i in 0..4 {
        next[i] = x[i] + mu[i] * dt + sig[i] * dw[i];
        if !next[i].is_finite() {
            return Err(Error::NumericalOverflow {
                t,
                step: 0,
                component: i,
                state: x,
            });
        }
    }
    let mut clamps = 0;
    for v in next.iter_mut() {
        if *v < state_floor {
            *v = state_floor;
            clamps += 1;
        }
    }
    Ok((StateVector::from_internal(next), clamps))
}

fn controls_at(
    mode: &ControlMode,
    t: f64,
    state: &StateVector,
    params: &ModelParams,
) -> Result<Controls> {
    match mode {
        ControlMode::Fixed(u) => Ok(*u),
        ControlMode::OptimalFeedback => {
            let d = control::optimal_controls(t, state, params)?;
            Ok(Controls::new(d.e_opt, d.v_opt))
        }
        ControlMode::Schedule(table) => {
            if table.is_empty() {
                return Err(Error::InvalidArgument {
                    name: "schedule",
                    reason: "control schedule is empty".into(),
                });
            }
            // entry with the largest time not exceeding t, independent of
            // the table's ordering; earliest entry before the table starts
            let mut best: Option<(f64, Controls)> = None;
            let mut earliest = table[0];
            for (tk, uk) in table {
                if *tk < earliest.0 {
                    earliest = (*tk, *uk);
                }
                if *tk <= t && best.is_none_or(|(bt, _)| *tk > bt) {
                    best = Some((*tk, *uk));
                }
            }
            Ok(best.unwrap_or(earliest).1)
        }
    }
}

/// Drives one path from `t0` to `t1`. All increments are keyed by
/// `(seed, replicate, step, component)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn drive_path(
    params: &ModelParams,
    t0: f64,
    t1: f64,
    n_steps: usize,
    x0: &StateVector,
    seed: u64,
    replicate: u64,
    mode: &ControlMode,
    state_floor: f64,
) -> Result<SimPath> {
    if !x0.is_finite() {
        return Err(Error::InvalidState {
            context: "simulate: initial state",
        });
    }
    if x0.min_component() < state_floor {
        return Err(Error::InvalidArgument {
            name: "x0",
            reason: format!(
                "initial state {x0:?} has a component below the state floor {state_floor}"
            ),
        });
    }
    let dt = (t1 - t0) / n_steps as f64;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut controls = Vec::with_capacity(n_steps);
    let mut clamp_events = 0u64;

    let mut x = *x0;
    times.push(t0);
    states.push(x);
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt;
        let u = controls_at(mode, t, &x, params)?;
        let dw = rng::step_increments(seed, replicate, k as u64, dt);
        let (next, clamps) =
            step_euler_maruyama(t, &x, &u, params, dt, &dw, state_floor).map_err(|e| match e {
                Error::NumericalOverflow {
                    t,
                    component,
                    state,
                    ..
                } => Error::NumericalOverflow {
                    t,
                    step: k,
                    component,
                    state,
                },
                other => other,
            })?;
        clamp_events += u64::from(clamps);
        x = next;
        times.push(t0 + (k + 1) as f64 * dt);
        states.push(x);
        controls.push(u);
    }
    Ok(SimPath {
        times,
        states,
        controls,
        clamp_events,
    })
}

/// Simulates one replicate trajectory over `[0, t_end]`.
pub fn simulate_path(
    params: &ModelParams,
    config: &SimConfig,
    x0: &StateVector,
    replicate_index: u64,
) -> Result<SimPath> {
    config.validate()?;
    drive_path(
        params,
        0.0,
        config.t_end,
        config.n_steps,
        x0,
        config.seed,
        replicate_index,
        &config.control_mode,
        config.state_floor,
    )
}

/// Simulates `n_replicates` independent trajectories in parallel. Replicate
/// `i` depends only on `(seed, i)`, never on scheduling.
pub fn simulate_ensemble(
    params: &ModelParams,
    config: &SimConfig,
    x0: &StateVector,
) -> Result<Ensemble> {
    config.validate()?;
    let results: Vec<Result<SimPath>> = (0..config.n_replicates)
        .into_par_iter()
        .map(|rep| simulate_path(params, config, x0, rep as u64))
        .collect();
    let mut paths = Vec::with_capacity(results.len());
    for (rep, r) in results.into_iter().enumerate() {
        match r {
            Ok(p) => paths.push(p),
            Err(e) => {
                return Err(Error::Replicate {
                    replicate: rep,
                    source: Box::new(e),
                })
            }
        }
    }
    Ok(Ensemble {
        paths,
        config: config.clone(),
        params: params.clone(),
    })
}

/// Per-time means and standard deviations plus the empirical supremum moment.
#[derive(Debug, Clone)]
pub struct EnsembleStats {
    pub times: Vec<f64>,
    /// Replicate mean of each component at each grid time.
    pub mean: Vec<StateVector>,
    /// Population standard deviation over replicates at each grid time.
    pub stddev: Vec<StateVector>,
    /// Replicate average of `max_k |X(t_k)|^2`.
    pub sup_moment: f64,
    /// Mean controls applied on each step.
    pub mean_controls: Vec<Controls>,
}

/// Aggregates an ensemble into per-time statistics.
pub fn ensemble_stats(ens: &Ensemble) -> EnsembleStats {
    let n = ens.paths.len();
    assert!(n > 0, "ensemble_stats needs a nonempty ensemble");
    let n_times = ens.paths[0].times.len();
    let nf = n as f64;

    let mut mean = vec![[0.0; 4]; n_times];
    let mut m2 = vec![[0.0; 4]; n_times];
    let mut mean_controls = vec![(0.0, 0.0); n_times - 1];
    let mut sup_sum = 0.0;
    for path in &ens.paths {
        let mut sup = 0.0f64;
        for (k, st) in path.states.iter().enumerate() {
            let xi = st.to_internal();
            for c in 0..4 {
                mean[k][c] += xi[c];
                m2[k][c] += xi[c] * xi[c];
            }
            sup = sup.max(st.norm_sq());
        }
        for (k, u) in path.controls.iter().enumerate() {
            mean_controls[k].0 += u.e_lock;
            mean_controls[k].1 += u.v_vacc;
        }
        sup_sum += sup;
    }
    let mean: Vec<StateVector> = mean
        .into_iter()
        .map(|m| StateVector::from_internal([m[0] / nf, m[1] / nf, m[2] / nf, m[3] / nf]))
        .collect();
    let stddev: Vec<StateVector> = m2
        .iter()
        .zip(&mean)
        .map(|(sq, m)| {
            let mi = m.to_internal();
            let mut sd = [0.0; 4];
            for c in 0..4 {
                sd[c] = (sq[c] / nf - mi[c] * mi[c]).max(0.0).sqrt();
            }
            StateVector::from_internal(sd)
        })
        .collect();
    EnsembleStats {
        times: ens.paths[0].times.clone(),
        mean,
        stddev,
        sup_moment: sup_sum / nf,
        mean_controls: mean_controls
            .into_iter()
            .map(|(e, v)| Controls::new(e / nf, v / nf))
            .collect(),
    }
}

/// Smallest `c0 > 0` with `sup_moment <= c0 (1 + |x0|^2) exp(c0 t)`, found by
/// bisection. Exists for any finite positive `sup_moment`.
pub fn fit_moment_constant(sup_moment: f64, x0: &StateVector, t_end: f64) -> Option<f64> {
    if !sup_moment.is_finite() || sup_moment <= 0.0 {
        return None;
    }
    let base = 1.0 + x0.norm_sq();
    let h = |c: f64| c * base * (c * t_end).exp() - sup_moment;
    let mut hi = 1.0;
    while h(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e8 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Terminal value of a scalar SDE `dX = a(t, X) dt + b(t, X) dB` under the
/// same explicit Euler–Maruyama update as the four-dimensional simulator.
/// `dw(k)` supplies the Brownian increment of step `k` (variance `dt`).
pub fn scalar_em_terminal(
    drift: impl Fn(f64, f64) -> f64,
    diffusion: impl Fn(f64, f64) -> f64,
    x0: f64,
    t0: f64,
    t1: f64,
    n_steps: usize,
    mut dw: impl FnMut(usize) -> f64,
) -> f64 {
    let dt = (t1 - t0) / n_steps as f64;
    let mut x = x0;
    for k in 0..n_steps {
        let t = t0 + k as f64 * dt;
        x += drift(t, x) * dt + diffusion(t, x) * dw(k);
    }
    x
}

/// [`scalar_em_terminal`] with increments drawn from the counter-based
/// stream for `(seed, replicate)`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_em_terminal_seeded(
    drift: impl Fn(f64, f64) -> f64,
    diffusion: impl Fn(f64, f64) -> f64,
    x0: f64,
    t0: f64,
    t1: f64,
    n_steps: usize,
    seed: u64,
    replicate: u64,
) -> f64 {
    let dt = (t1 - t0) / n_steps as f64;
    let sq = dt.sqrt();
    scalar_em_terminal(drift, diffusion, x0, t0, t1, n_steps, |k| {
        sq * rng::standard_normal(seed, replicate, k as u64, 0)
    })
}
