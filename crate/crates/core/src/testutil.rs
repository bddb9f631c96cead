//! Shared fixtures for unit tests.

use crate::model::{
    Controls, GxxSign, IncidenceDenominator, ModelParams, StateVector, Temperature,
};

/// Baseline parameter set used throughout the tests (percent-scaled
/// population, quadratic transmission exponents, uniform cost weights).
pub(crate) fn table1_params() -> ModelParams {
    ModelParams {
        eta: 0.001,
        kappa: 0.2,
        zeta: 0.001,
        mu: 0.3,
        rho: 0.5,
        n_pop: 100.0,
        beta0: 0.0,
        beta1: 0.2,
        beta2: 0.2,
        theta1: 2.0,
        theta2: 2.0,
        m_pm: 12.5,
        q_mod: 0.5,
        temp: Temperature::Constant(1.0),
        r_disc: 0.05,
        alpha: [[1.0 / 3.0; 3]; 2],
        sigma: [0.05, 0.01, 0.03, 0.05],
        x_star: StateVector::new(0.0, 0.0, 0.0, 0.0),
        incidence_denominator: IncidenceDenominator::Eq1,
        gxx_sign: GxxSign::Printed,
    }
}

pub(crate) fn table1_x0() -> StateVector {
    StateVector::new(1.0, 99.8, 0.1, 0.1)
}

pub(crate) fn table1_fixed_controls() -> Controls {
    Controls::new(1.0, 0.674)
}
