//! Right-hand side of the converter/grid model: algebraic grid-node solve,
//! dq projections, control references, and the 15 state derivatives.

use super::params::ModelParams;
use super::state::{idx, InputVector, StateVector, N_STATES};
use crate::error::{Error, Result};

/// Every algebraic (non-state) quantity computed along the way to the
/// derivatives. Exposed both for inspection and because regression targets
/// are sometimes defined on these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlgebraicOutputs {
    /// Grid-node voltage, rectangular components.
    pub v_grid_r: f64,
    pub v_grid_i: f64,
    /// Filter-bus voltage projected into the PLL dq frame.
    pub v_d_filt: f64,
    pub v_q_filt: f64,
    /// Converter current projected into the PLL dq frame.
    pub i_d_cv: f64,
    pub i_q_cv: f64,
    /// Outer-loop current references (note the cross pairing: the active
    /// loop commands the q axis, the reactive loop the d axis).
    pub i_d_ref: f64,
    pub i_q_ref: f64,
    /// Inner-loop PI voltage commands before decoupling/feed-forward.
    pub v_d_ref: f64,
    pub v_q_ref: f64,
    /// Converter voltage references after decoupling and feed-forward.
    pub v_d_cvref: f64,
    pub v_q_cvref: f64,
    /// Converter terminal voltage back in rectangular coordinates.
    pub v_cv_r: f64,
    pub v_cv_i: f64,
    /// PLL frequency estimate in pu.
    pub omega_pll: f64,
}

/// Solve the algebraic node between the grid-side inductor and the line to
/// the infinite bus: the complex current balance
/// `(v_grid − v̄2)·Y1 + (v_grid − v_filt)·Yf = 0`.
///
/// Returns the node voltage in rectangular components.
pub fn solve_grid_node(
    v_filt_r: f64,
    v_filt_i: f64,
    params: &ModelParams,
) -> Result<(f64, f64)> {
    let y1 = params.y1();
    let yf = params.yf();
    let (sg, sb) = (y1.g + yf.g, y1.b + yf.b);
    let denom = sg * sg + sb * sb;
    let scale = y1.g * y1.g + y1.b * y1.b;
    if denom < 1e-24 * scale.max(1e-300) {
        return Err(Error::Numerics(
            "degenerate network: |Y1 + Yf| vanishes relative to |Y1|".into(),
        ));
    }
    let v2_r = params.v2_mag * params.theta2.cos();
    let v2_i = params.v2_mag * params.theta2.sin();
    // Numerator Y1·v̄2 + Yf·v̄_filt, then divide by (Y1 + Yf).
    let num_r = y1.g * v2_r - y1.b * v2_i + yf.g * v_filt_r - yf.b * v_filt_i;
    let num_i = y1.g * v2_i + y1.b * v2_r + yf.g * v_filt_i + yf.b * v_filt_r;
    let v_grid_r = (num_r * sg + num_i * sb) / denom;
    let v_grid_i = (num_i * sg - num_r * sb) / denom;
    Ok((v_grid_r, v_grid_i))
}

/// Compute every algebraic output at the given state and inputs.
pub fn algebraic_outputs(
    x: &StateVector,
    u: &InputVector,
    params: &ModelParams,
) -> Result<AlgebraicOutputs> {
    let (v_grid_r, v_grid_i) = solve_grid_node(x[idx::V_FILT_R], x[idx::V_FILT_I], params)?;

    let theta = x[idx::THETA_PLL];
    let (sin_t, cos_t) = theta.sin_cos();

    // dq projections of the filter voltage and converter current.
    let v_d_filt = cos_t * x[idx::V_FILT_R] + sin_t * x[idx::V_FILT_I];
    let v_q_filt = -sin_t * x[idx::V_FILT_R] + cos_t * x[idx::V_FILT_I];
    let i_d_cv = cos_t * x[idx::I_CV_R] + sin_t * x[idx::I_CV_I];
    let i_q_cv = -sin_t * x[idx::I_CV_R] + cos_t * x[idx::I_CV_I];

    let omega_pll = params.kp_pll * x[idx::V_Q_PLL] + params.ki_pll * x[idx::EPS_PLL] + 1.0;

    // Outer loops: active power commands i_q, reactive power commands i_d.
    let i_q_ref = params.kp_p * (u[0] - x[idx::P_M]) + params.ki_p * x[idx::SIGMA_P];
    let i_d_ref = params.kp_q * (u[1] - x[idx::Q_M]) + params.ki_q * x[idx::SIGMA_Q];

    // Inner current PI, then decoupling and voltage feed-forward.
    let v_d_ref = params.kp_c * (i_d_ref - i_d_cv) + params.ki_c * x[idx::GAMMA_D];
    let v_q_ref = params.kp_c * (i_q_ref - i_q_cv) + params.ki_c * x[idx::GAMMA_Q];
    let v_d_cvref = v_d_ref - omega_pll * params.l_f * i_q_cv + params.k_ffv * v_d_filt;
    let v_q_cvref = v_q_ref + omega_pll * params.l_f * i_d_cv + params.k_ffv * v_q_filt;

    // Average converter model: rotate the dq command back to rectangular.
    let v_cv_r = cos_t * v_d_cvref - sin_t * v_q_cvref;
    let v_cv_i = sin_t * v_d_cvref + cos_t * v_q_cvref;

    Ok(AlgebraicOutputs {
        v_grid_r,
        v_grid_i,
        v_d_filt,
        v_q_filt,
        i_d_cv,
        i_q_cv,
        i_d_ref,
        i_q_ref,
        v_d_ref,
        v_q_ref,
        v_d_cvref,
        v_q_cvref,
        v_cv_r,
        v_cv_i,
        omega_pll,
    })
}

/// Evaluate the 15 state derivatives. Pure; deterministic.
pub fn rhs(x: &StateVector, u: &InputVector, params: &ModelParams) -> Result<StateVector> {
    let a = algebraic_outputs(x, u, params)?;
    let p = params;
    let mut dx = [0.0; N_STATES];

    // LCL filter: converter-side current.
    dx[idx::I_CV_R] = (p.omega_b / p.l_f)
        * (a.v_cv_r - x[idx::V_FILT_R] - p.r_f * x[idx::I_CV_R]
            + p.omega_s * p.l_f * x[idx::I_CV_I]);
    dx[idx::I_CV_I] = (p.omega_b / p.l_f)
        * (a.v_cv_i - x[idx::V_FILT_I] - p.r_f * x[idx::I_CV_I]
            - p.omega_s * p.l_f * x[idx::I_CV_R]);

    // LCL filter: capacitor voltage.
    dx[idx::V_FILT_R] = (p.omega_b / p.c_f)
        * (x[idx::I_CV_R] - x[idx::I_FILT_R] + p.omega_s * p.c_f * x[idx::V_FILT_I]);
    dx[idx::V_FILT_I] = (p.omega_b / p.c_f)
        * (x[idx::I_CV_I] - x[idx::I_FILT_I] - p.omega_s * p.c_f * x[idx::V_FILT_R]);

    // LCL filter: grid-side current toward the algebraic node.
    dx[idx::I_FILT_R] = (p.omega_b / p.l_g)
        * (x[idx::V_FILT_R] - a.v_grid_r - p.r_g * x[idx::I_FILT_R]
            + p.omega_s * p.l_g * x[idx::I_FILT_I]);
    dx[idx::I_FILT_I] = (p.omega_b / p.l_g)
        * (x[idx::V_FILT_I] - a.v_grid_i - p.r_g * x[idx::I_FILT_I]
            - p.omega_s * p.l_g * x[idx::I_FILT_R]);

    // PLL: filtered q-axis voltage, its integral, and the tracked angle.
    dx[idx::V_Q_PLL] = p.l_lp * (a.v_q_filt - x[idx::V_Q_PLL]);
    dx[idx::EPS_PLL] = x[idx::V_Q_PLL];
    dx[idx::THETA_PLL] = p.omega_b * (a.omega_pll - p.omega_s);

    // Outer control: PI integrators and measured-power filters. Powers are
    // measured at the filter bus with the grid-side current.
    let p_meas = x[idx::V_FILT_R] * x[idx::I_FILT_R] + x[idx::V_FILT_I] * x[idx::I_FILT_I];
    let q_meas = -x[idx::V_FILT_R] * x[idx::I_FILT_I] + x[idx::V_FILT_I] * x[idx::I_FILT_R];
    dx[idx::SIGMA_P] = u[0] - x[idx::P_M];
    dx[idx::P_M] = p.omega_z * (p_meas - x[idx::P_M]);
    dx[idx::SIGMA_Q] = u[1] - x[idx::Q_M];
    dx[idx::Q_M] = p.omega_f * (q_meas - x[idx::Q_M]);

    // Inner control integrators.
    dx[idx::GAMMA_D] = a.i_d_ref - a.i_d_cv;
    dx[idx::GAMMA_Q] = a.i_q_ref - a.i_q_cv;

    Ok(dx)
}
