//! State and input vectors with a fixed, documented component order.
//!
//! The order matters: dataset columns, feature-library terms, and report
//! rows all inherit it.

/// Number of dynamic states.
pub const N_STATES: usize = 15;
/// Number of exogenous inputs.
pub const N_INPUTS: usize = 2;

/// State component names in storage order.
pub const STATE_NAMES: [&str; N_STATES] = [
    "i_cv_r", "i_cv_i", "v_filt_r", "v_filt_i", "i_filt_r", "i_filt_i", "v_q_pll", "eps_pll",
    "theta_pll", "sigma_p", "p_m", "sigma_q", "q_m", "gamma_d", "gamma_q",
];

/// Input component names in storage order.
pub const INPUT_NAMES: [&str; N_INPUTS] = ["p_ref", "q_ref"];

/// Indices into [`StateVector`], named for readability at use sites.
pub mod idx {
    pub const I_CV_R: usize = 0;
    pub const I_CV_I: usize = 1;
    pub const V_FILT_R: usize = 2;
    pub const V_FILT_I: usize = 3;
    pub const I_FILT_R: usize = 4;
    pub const I_FILT_I: usize = 5;
    pub const V_Q_PLL: usize = 6;
    pub const EPS_PLL: usize = 7;
    pub const THETA_PLL: usize = 8;
    pub const SIGMA_P: usize = 9;
    pub const P_M: usize = 10;
    pub const SIGMA_Q: usize = 11;
    pub const Q_M: usize = 12;
    pub const GAMMA_D: usize = 13;
    pub const GAMMA_Q: usize = 14;
}

/// Converter/grid state: converter current, filter voltage, grid-side
/// current (rectangular components), PLL states, outer-loop states, and
/// inner-loop integrators.
pub type StateVector = [f64; N_STATES];

/// Exogenous references: (p_ref, q_ref).
pub type InputVector = [f64; N_INPUTS];

/// Resolve a state name to its index.
pub fn state_index(name: &str) -> Option<usize> {
    STATE_NAMES.iter().position(|n| *n == name)
}
