//! State space, parameters and the drift/diffusion/cost building blocks of
//! the controlled SIR system with a dynamic transmission rate.
//!
//! Component ordering: the state vector is stored in *internal* order
//! `(beta, S, I, R)` while [`drift`] and [`diffusion`] report their rows in
//! *display* order `(S, I, R, beta)`, matching how the drift vector and
//! diffusion matrix are conventionally laid out. The permutations
//! [`DISPLAY_FROM_INTERNAL`] / [`INTERNAL_FROM_DISPLAY`] are part of the
//! public contract so callers never have to guess.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four state components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateComponent {
    Beta,
    S,
    I,
    R,
}

/// Internal storage order of [`StateVector`].
pub const INTERNAL_ORDER: [StateComponent; 4] = [
    StateComponent::Beta,
    StateComponent::S,
    StateComponent::I,
    StateComponent::R,
];

/// Row order used by [`drift`] and [`diffusion`].
pub const DISPLAY_ORDER: [StateComponent; 4] = [
    StateComponent::S,
    StateComponent::I,
    StateComponent::R,
    StateComponent::Beta,
];

/// `display[k] == internal[DISPLAY_FROM_INTERNAL[k]]`.
pub const DISPLAY_FROM_INTERNAL: [usize; 4] = [1, 2, 3, 0];

/// `internal[j] == display[INTERNAL_FROM_DISPLAY[j]]`.
pub const INTERNAL_FROM_DISPLAY: [usize; 4] = [3, 0, 1, 2];

/// The four state components at an instant: transmission rate and the
/// susceptible/infected/removed percentages of the population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub beta: f64,
    pub s_pop: f64,
    pub i_pop: f64,
    pub r_pop: f64,
}

impl StateVector {
    pub fn new(beta: f64, s_pop: f64, i_pop: f64, r_pop: f64) -> Self {
        Self {
            beta,
            s_pop,
            i_pop,
            r_pop,
        }
    }

    /// Components in internal order `(beta, S, I, R)`.
    pub fn to_internal(self) -> [f64; 4] {
        [self.beta, self.s_pop, self.i_pop, self.r_pop]
    }

    /// Builds a state from components in internal order `(beta, S, I, R)`.
    pub fn from_internal(x: [f64; 4]) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn get(&self, c: StateComponent) -> f64 {
        match c {
            StateComponent::Beta => self.beta,
            StateComponent::S => self.s_pop,
            StateComponent::I => self.i_pop,
            StateComponent::R => self.r_pop,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_internal().iter().all(|x| x.is_finite())
    }

    /// Squared Euclidean norm over all four components.
    pub fn norm_sq(&self) -> f64 {
        self.to_internal().iter().map(|x| x * x).sum()
    }

    pub fn min_component(&self) -> f64 {
        self.to_internal().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Lock-down intensity and vaccination rate, both in `[0, 1]`.
/// `e_lock = 0` means a complete shut-down, `e_lock = 1` a fully open economy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub e_lock: f64,
    pub v_vacc: f64,
}

impl Controls {
    pub fn new(e_lock: f64, v_vacc: f64) -> Self {
        Self { e_lock, v_vacc }
    }

    /// Both components clamped into `[0, 1]`.
    pub fn clamped(e_lock: f64, v_vacc: f64) -> Self {
        Self {
            e_lock: e_lock.clamp(0.0, 1.0),
            v_vacc: v_vacc.clamp(0.0, 1.0),
        }
    }

    pub fn in_unit_square(&self) -> bool {
        (0.0..=1.0).contains(&self.e_lock) && (0.0..=1.0).contains(&self.v_vacc)
    }
}

/// Ambient temperature as a function of time: either a constant or a
/// piecewise-linear table of `(time, value)` knots (clamped outside the table).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Temperature {
    Constant(f64),
    Table(Vec<(f64, f64)>),
}

impl Temperature {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Temperature::Constant(c) => *c,
            Temperature::Table(knots) => {
                if knots.is_empty() {
                    return 0.0;
                }
                if t <= knots[0].0 {
                    return knots[0].1;
                }
                let last = knots[knots.len() - 1];
                if t >= last.0 {
                    return last.1;
                }
                for w in knots.windows(2) {
                    let ((t0, v0), (t1, v1)) = (w[0], w[1]);
                    if t <= t1 {
                        let frac = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
                        return v0 + frac * (v1 - v0);
                    }
                }
                last.1
            }
        }
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature::Constant(1.0)
    }
}

/// Which denominator the incidence term uses.
///
/// `Eq1` is `(1 + rho*I) + eta*N`; `Saturated` drops the `eta*N` term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum IncidenceDenominator {
    #[default]
    Eq1,
    Saturated,
}

/// Convention for the second-order group of the assembled running function
/// `f~` (see [`crate::control::f_tilde`]).
///
/// * `Printed` — the group enters linearly in `sigma_i (x_i - x_i*)` with a
///   leading `-1/2` and no particulate factor on the beta term.
/// * `Analytic` — same group with the sign implied by the true second
///   derivative of the log-based potential (`+1/2`).
/// * `Quadratic` — full Ito second-order term `+1/2 * diag^2 / x_i^2` using
///   the actual diffusion diagonal (particulate factor included).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GxxSign {
    #[default]
    Printed,
    Analytic,
    Quadratic,
}

/// All rate constants, cost coefficients, diffusion intensities and
/// steady-state anchors of the model.
///
/// `alpha[0] = (a11, a12, a13)` weights the susceptible/vaccination part of
/// the running cost and `alpha[1] = (a21, a22, a23)` the infected/lock-down
/// part. `sigma = (sigma1..sigma4)` pair with `(S, I, R, beta)` in that
/// order; the beta entry additionally carries the particulate factor `m_pm`
/// inside the diffusion matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub eta: f64,
    pub kappa: f64,
    pub zeta: f64,
    pub mu: f64,
    pub rho: f64,
    pub n_pop: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub m_pm: f64,
    pub q_mod: f64,
    pub temp: Temperature,
    pub r_disc: f64,
    pub alpha: [[f64; 3]; 2],
    pub sigma: [f64; 4],
    pub x_star: StateVector,
    #[serde(default)]
    pub incidence_denominator: IncidenceDenominator,
    #[serde(default)]
    pub gxx_sign: GxxSign,
}

/// A single parameter-validation failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl ModelParams {
    /// Checks every type invariant, collecting one entry per violated field.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        let mut push = |field: &str, message: String| {
            v.push(Violation {
                field: field.to_string(),
                message,
            })
        };

        for (name, value) in [
            ("eta", self.eta),
            ("kappa", self.kappa),
            ("zeta", self.zeta),
            ("mu", self.mu),
        ] {
            if !value.is_finite() || value < 0.0 {
                push(
                    name,
                    format!("{name} must be a finite rate >= 0, got {value}"),
                );
            }
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            push("rho", "rho must lie in (0,1]".to_string());
        }
        if !(self.n_pop > 0.0) || !self.n_pop.is_finite() {
            push("n_pop", format!("n_pop must be > 0, got {}", self.n_pop));
        }
        for (name, value) in [
            ("beta0", self.beta0),
            ("beta1", self.beta1),
            ("beta2", self.beta2),
        ] {
            if !(0.0..=1.0).contains(&value) {
                push(name, format!("{name} must lie in [0,1], got {value}"));
            }
        }
        if !(self.theta1 > 1.0) {
            push("theta1", format!("theta1 must be > 1, got {}", self.theta1));
        }
        if !(self.theta2 > 1.0) {
            push("theta2", format!("theta2 must be > 1, got {}", self.theta2));
        }
        if !(self.m_pm > 0.0) || !self.m_pm.is_finite() {
            push("m_pm", format!("m_pm must be > 0, got {}", self.m_pm));
        }
        if !self.q_mod.is_finite() {
            push("q_mod", "q_mod must be finite".to_string());
        }
        if !(self.r_disc > 0.0 && self.r_disc < 1.0) {
            push(
                "r_disc",
                format!("r_disc must lie in (0,1), got {}", self.r_disc),
            );
        }
        if !(self.alpha[0][0] > 0.0) {
            push("alpha[1][1]", "alpha[1][1] must be > 0".to_string());
        }
        if !(self.alpha[1][0] > 0.0) {
            push("alpha[2][1]", "alpha[2][1] must be > 0".to_string());
        }
        for (i, row) in self.alpha.iter().enumerate() {
            for (j, a) in row.iter().enumerate() {
                if !a.is_finite() {
                    push(
                        &format!("alpha[{}][{}]", i + 1, j + 1),
                        "cost coefficients must be finite".to_string(),
                    );
                }
            }
        }
        for (k, s) in self.sigma.iter().enumerate() {
            if !s.is_finite() || *s < 0.0 {
                push(
                    &format!("sigma{}", k + 1),
                    format!("diffusion intensities must be >= 0, got {s}"),
                );
            }
        }
        if !self.x_star.is_finite() {
            push("x_star", "steady-state anchors must be finite".to_string());
        } else if self.x_star.min_component() < 0.0 {
            push(
                "x_star",
                "steady-state anchors must be nonnegative".to_string(),
            );
        }
        if let Temperature::Table(knots) = &self.temp {
            let sorted = knots.windows(2).all(|w| w[0].0 <= w[1].0);
            let finite = knots.iter().all(|(t, x)| t.is_finite() && x.is_finite());
            if knots.is_empty() || !sorted || !finite {
                push(
                    "temp",
                    "temperature table must be non-empty, finite and sorted by time".to_string(),
                );
            }
        }

        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }
}

/// Free-function form of [`ModelParams::validate`].
pub fn validate_params(params: &ModelParams) -> std::result::Result<(), Vec<Violation>> {
    params.validate()
}

/// Incidence (new-infection inflow) `beta * S * I / denom` with the
/// configured saturating denominator.
pub fn incidence(state: &StateVector, params: &ModelParams) -> Result<f64> {
    if !state.is_finite() {
        return Err(Error::InvalidState {
            context: "incidence: state",
        });
    }
    let denom = match params.incidence_denominator {
        IncidenceDenominator::Eq1 => (1.0 + params.rho * state.i_pop) + params.eta * params.n_pop,
        IncidenceDenominator::Saturated => 1.0 + params.rho * state.i_pop,
    };
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::InvalidState {
            context: "incidence: denominator",
        });
    }
    Ok(state.beta * state.s_pop * state.i_pop / denom)
}

/// Drift of the four state equations, in display order `(S, I, R, beta)`.
pub fn drift(t: f64, state: &StateVector, u: &Controls, params: &ModelParams) -> Result<[f64; 4]> {
    let inc = incidence(state, params)?;
    let StateVector {
        beta: _,
        s_pop: s,
        i_pop: i,
        r_pop: r,
    } = *state;
    let Controls {
        e_lock: e,
        v_vacc: v,
    } = *u;

    let ds = params.eta * params.n_pop - inc - params.kappa * s - v + params.zeta * r;
    let di = inc - (params.mu + params.kappa) * i - e;
    let dr = params.mu * v * i - (params.kappa + params.zeta) * e * r;
    let dbeta = params.q_mod
        * i
        * (params.beta0 * params.temp.at(t)
            + params.beta1 * params.m_pm * (1.0 - e).powf(params.theta1)
            - params.beta2 * v.powf(params.theta2));

    let out = [ds, di, dr, dbeta];
    for (k, x) in out.iter().enumerate() {
        if !x.is_finite() {
            return Err(Error::NonFiniteDrift { t, component: k });
        }
    }
    Ok(out)
}

/// Drift in internal order `(beta, S, I, R)`.
pub fn drift_internal(
    t: f64,
    state: &StateVector,
    u: &Controls,
    params: &ModelParams,
) -> Result<[f64; 4]> {
    let d = drift(t, state, u, params)?;
    Ok([
        d[INTERNAL_FROM_DISPLAY[0]],
        d[INTERNAL_FROM_DISPLAY[1]],
        d[INTERNAL_FROM_DISPLAY[2]],
        d[INTERNAL_FROM_DISPLAY[3]],
    ])
}

/// Diagonal of the diffusion matrix in display order `(S, I, R, beta)`:
/// `sigma1 (S - S*), sigma2 (I - I*), sigma3 (R - R*), sigma4 (beta - beta*) M`.
pub fn diffusion_diag(state: &StateVector, params: &ModelParams) -> [f64; 4] {
    let xs = params.x_star;
    [
        params.sigma[0] * (state.s_pop - xs.s_pop),
        params.sigma[1] * (state.i_pop - xs.i_pop),
        params.sigma[2] * (state.r_pop - xs.r_pop),
        params.sigma[3] * (state.beta - xs.beta) * params.m_pm,
    ]
}

/// Full 4x4 diffusion matrix (diagonal; display order).
pub fn diffusion(state: &StateVector, params: &ModelParams) -> [[f64; 4]; 4] {
    let d = diffusion_diag(state, params);
    let mut m = [[0.0; 4]; 4];
    for k in 0..4 {
        m[k][k] = d[k];
    }
    m
}

/// Diffusion diagonal in internal order `(beta, S, I, R)`.
pub fn diffusion_diag_internal(state: &StateVector, params: &ModelParams) -> [f64; 4] {
    let d = diffusion_diag(state, params);
    [
        d[INTERNAL_FROM_DISPLAY[0]],
        d[INTERNAL_FROM_DISPLAY[1]],
        d[INTERNAL_FROM_DISPLAY[2]],
        d[INTERNAL_FROM_DISPLAY[3]],
    ]
}

/// Discounted running cost
/// `exp(-rt) [S (a11 v^2/2 + a12 v + a13) + I (a21 e^2/2 + a22 e + a23)] + beta S I`.
pub fn cost_integrand(t: f64, state: &StateVector, u: &Controls, params: &ModelParams) -> f64 {
    let a = &params.alpha;
    let Controls {
        e_lock: e,
        v_vacc: v,
    } = *u;
    let disc = (-params.r_disc * t).exp();
    disc * (state.s_pop * (0.5 * a[0][0] * v * v + a[0][1] * v + a[0][2])
        + state.i_pop * (0.5 * a[1][0] * e * e + a[1][1] * e + a[1][2]))
        + state.beta * state.s_pop * state.i_pop
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::table1_params;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn x0() -> StateVector {
        StateVector::new(1.0, 99.8, 0.1, 0.1)
    }

    #[test]
    fn incidence_matches_hand_evaluation() {
        // 1 * 99.8 * 0.1 / ((1 + 0.5*0.1) + 0.001*100) = 9.98 / 1.15
        let got = incidence(&x0(), &table1_params()).unwrap();
        assert_relative_eq!(got, 8.678260869565217, max_relative = 1e-15);
    }

    #[test]
    fn incidence_vanishes_without_infected_susceptible_or_transmission() {
        let p = table1_params();
        for st in [
            StateVector::new(1.0, 99.8, 0.0, 0.1),
            StateVector::new(1.0, 0.0, 0.1, 0.1),
            StateVector::new(0.0, 99.8, 0.1, 0.1),
        ] {
            assert_eq!(incidence(&st, &p).unwrap(), 0.0);
        }
    }

    #[test]
    fn incidence_rejects_non_finite_state() {
        let p = table1_params();
        let st = StateVector::new(f64::NAN, 1.0, 1.0, 1.0);
        assert!(matches!(
            incidence(&st, &p),
            Err(Error::InvalidState { .. })
        ));
    }

    #[test]
    fn incidence_monotone_in_s_and_beta() {
        let p = table1_params();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let beta: f64 = rng.random_range(0.1..2.0);
            let s: f64 = rng.random_range(1.0..100.0);
            let i: f64 = rng.random_range(0.1..50.0);
            let base = incidence(&StateVector::new(beta, s, i, 0.1), &p).unwrap();
            let more_s = incidence(&StateVector::new(beta, s + 1.0, i, 0.1), &p).unwrap();
            let more_b = incidence(&StateVector::new(beta + 0.1, s, i, 0.1), &p).unwrap();
            assert!(more_s >= base);
            assert!(more_b > base);
        }
    }

    #[test]
    fn incidence_concave_in_infected() {
        // Second central differences in I are negative with the saturated
        // denominator (eta = 0 reduces the configured one to it).
        let mut p = table1_params();
        p.eta = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let beta: f64 = rng.random_range(0.2..2.0);
            let s: f64 = rng.random_range(5.0..100.0);
            let i: f64 = rng.random_range(0.5..40.0);
            let h = 1e-3 * i;
            let f = |ii: f64| incidence(&StateVector::new(beta, s, ii, 0.1), &p).unwrap();
            let second = (f(i + h) - 2.0 * f(i) + f(i - h)) / (h * h);
            assert!(second < 0.0, "second difference {second} at I={i}");
        }
    }

    #[test]
    fn drift_matches_hand_evaluation_at_table1_point() {
        let p = table1_params();
        let d = drift(0.0, &x0(), &Controls::new(1.0, 0.674), &p).unwrap();
        // 0.1 - 9.98/1.15 - 19.96 - 0.674 + 0.0001
        assert_relative_eq!(d[0], -29.212160869565217, max_relative = 1e-14);
    }

    #[test]
    fn drift_zero_when_all_flows_vanish() {
        let mut p = table1_params();
        p.eta = 0.0;
        p.kappa = 0.0;
        p.zeta = 0.0;
        p.mu = 0.0;
        p.beta0 = 0.0;
        p.beta1 = 0.0;
        p.beta2 = 0.0;
        let st = StateVector::new(0.0, 50.0, 5.0, 5.0);
        let d = drift(0.3, &st, &Controls::new(0.0, 0.0), &p).unwrap();
        assert_eq!(d, [0.0; 4]);
    }

    #[test]
    fn closed_population_conserves_s_i_r_drift() {
        let mut p = table1_params();
        p.eta = 0.0;
        p.kappa = 0.0;
        p.zeta = 0.0;
        p.mu = 0.0;
        let u = Controls::new(0.0, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let st = StateVector::new(
                rng.random_range(0.01..3.0),
                rng.random_range(0.1..100.0),
                rng.random_range(0.1..100.0),
                rng.random_range(0.1..100.0),
            );
            let d = drift(rng.random_range(0.0..1.0), &st, &u, &p).unwrap();
            assert!(
                (d[0] + d[1] + d[2]).abs() < 1e-12,
                "S+I+R drift sum {} at {st:?}",
                d[0] + d[1] + d[2]
            );
        }
    }

    #[test]
    fn drift_order_maps_are_inverse() {
        let p = table1_params();
        let u = Controls::new(0.7, 0.2);
        let disp = drift(0.2, &x0(), &u, &p).unwrap();
        let int = drift_internal(0.2, &x0(), &u, &p).unwrap();
        for k in 0..4 {
            assert_eq!(disp[k], int[DISPLAY_FROM_INTERNAL[k]]);
            assert_eq!(int[k], disp[INTERNAL_FROM_DISPLAY[k]]);
        }
        assert_eq!(disp[3], int[0]); // beta row
    }

    #[test]
    fn diffusion_vanishes_at_anchor_and_with_zero_sigma() {
        let mut p = table1_params();
        p.x_star = x0();
        assert_eq!(diffusion(&x0(), &p), [[0.0; 4]; 4]);

        let mut p2 = table1_params();
        p2.sigma = [0.0; 4];
        assert_eq!(diffusion(&x0(), &p2), [[0.0; 4]; 4]);
    }

    #[test]
    fn diffusion_first_entry_scales_with_distance() {
        let mut p = table1_params();
        p.sigma = [0.1, 0.0, 0.0, 0.0];
        p.x_star = StateVector::new(0.0, 90.0, 0.0, 0.0);
        let m = diffusion(&x0(), &p);
        assert_abs_diff_eq!(m[0][0], 0.98, epsilon = 1e-14);
        // off-diagonals stay zero
        for (r, row) in m.iter().enumerate() {
            for (c, entry) in row.iter().enumerate() {
                if r != c {
                    assert_eq!(*entry, 0.0);
                }
            }
        }
        // beta entry carries the particulate factor
        let mut p3 = table1_params();
        p3.sigma = [0.0, 0.0, 0.0, 0.1];
        p3.x_star = StateVector::new(0.5, 0.0, 0.0, 0.0);
        let m3 = diffusion(&x0(), &p3);
        assert_abs_diff_eq!(m3[3][3], 0.1 * 0.5 * 12.5, epsilon = 1e-14);
    }

    #[test]
    fn cost_integrand_matches_hand_evaluation() {
        let p = table1_params();
        let c = cost_integrand(0.0, &x0(), &Controls::new(0.0, 0.0), &p);
        // (99.8 + 0.1)/3 + 99.8*0.1
        assert_relative_eq!(c, 43.28, max_relative = 1e-14);
        let zero = cost_integrand(
            0.3,
            &StateVector::new(1.0, 0.0, 0.0, 5.0),
            &Controls::new(0.4, 0.4),
            &p,
        );
        assert_eq!(zero, 0.0);
    }

    #[test]
    fn cost_integrand_hessian_matches_finite_differences() {
        let p = table1_params();
        let st = x0();
        let t = 0.37;
        // the integrand is exactly quadratic in each control, so a wide step
        // has no truncation error and avoids cancellation noise
        let h = 0.5;
        let f = |e: f64, v: f64| cost_integrand(t, &st, &Controls::new(e, v), &p);
        let dvv = (f(0.3, 0.5 + h) - 2.0 * f(0.3, 0.5) + f(0.3, 0.5 - h)) / (h * h);
        let dee = (f(0.3 + h, 0.5) - 2.0 * f(0.3, 0.5) + f(0.3 - h, 0.5)) / (h * h);
        let disc = (-p.r_disc * t).exp();
        assert_relative_eq!(dvv, disc * st.s_pop * p.alpha[0][0], max_relative = 1e-6);
        assert_relative_eq!(dee, disc * st.i_pop * p.alpha[1][0], max_relative = 1e-6);
        assert!(dvv > 0.0 && dee > 0.0);
    }

    #[test]
    fn validate_accepts_table1_and_reports_violations() {
        assert!(table1_params().validate().is_ok());

        let mut p = table1_params();
        p.alpha[0][0] = 0.0;
        let errs = p.validate().unwrap_err();
        assert!(errs.iter().any(|v| v.field == "alpha[1][1]"));

        let mut p = table1_params();
        p.rho = 1.5;
        let errs = p.validate().unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].field, "rho");
        assert!(errs[0].message.contains("(0,1]"));

        let mut p = table1_params();
        p.rho = 1.5;
        p.theta1 = 1.0;
        p.sigma[2] = -0.1;
        let errs = p.validate().unwrap_err();
        assert_eq!(errs.len(), 3);
    }

    #[test]
    fn saturated_denominator_switch() {
        let mut p = table1_params();
        p.incidence_denominator = IncidenceDenominator::Saturated;
        let got = incidence(&x0(), &p).unwrap();
        assert_relative_eq!(got, 9.98 / 1.05, max_relative = 1e-15);
    }

    #[test]
    fn temperature_table_interpolates_and_clamps() {
        let t = Temperature::Table(vec![(0.0, 10.0), (1.0, 20.0), (2.0, 20.0)]);
        assert_eq!(t.at(-1.0), 10.0);
        assert_eq!(t.at(0.5), 15.0);
        assert_eq!(t.at(3.0), 20.0);
        assert_eq!(Temperature::Constant(4.0).at(0.9), 4.0);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn incidence_is_nonnegative_bounded_and_monotone(
                beta in 0.0f64..3.0,
                s in 0.0f64..120.0,
                i in 0.0f64..120.0,
                rho in 0.001f64..1.0,
                eta in 0.0f64..0.1,
            ) {
                let mut p = table1_params();
                p.rho = rho;
                p.eta = eta;
                let inc = incidence(&StateVector::new(beta, s, i, 0.1), &p).unwrap();
                prop_assert!(inc >= 0.0);
                // saturation: never above the unsaturated mass action term
                prop_assert!(inc <= beta * s * i + 1e-12);
                let more_beta =
                    incidence(&StateVector::new(beta + 0.5, s, i, 0.1), &p).unwrap();
                prop_assert!(more_beta >= inc);
            }

            #[test]
            fn drift_and_diffusion_orders_stay_consistent(
                beta in 0.01f64..3.0,
                s in 0.01f64..100.0,
                i in 0.01f64..100.0,
                r in 0.01f64..100.0,
                e in 0.0f64..1.0,
                v in 0.0f64..1.0,
            ) {
                let p = table1_params();
                let st = StateVector::new(beta, s, i, r);
                let u = Controls::new(e, v);
                let disp = drift(0.2, &st, &u, &p).unwrap();
                let int = drift_internal(0.2, &st, &u, &p).unwrap();
                for k in 0..4 {
                    prop_assert_eq!(disp[k], int[DISPLAY_FROM_INTERNAL[k]]);
                }
                let dd = diffusion_diag(&st, &p);
                let di = diffusion_diag_internal(&st, &p);
                for k in 0..4 {
                    prop_assert_eq!(dd[k], di[DISPLAY_FROM_INTERNAL[k]]);
                }
            }
        }
    }
}
