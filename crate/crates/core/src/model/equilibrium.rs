//! Equilibrium solver: damped Newton iteration on the full state vector.

use nalgebra::{DMatrix, DVector};

use super::dynamics::rhs;
use super::params::ModelParams;
use super::state::{idx, InputVector, StateVector, N_STATES};
use crate::error::{Error, Result};

/// Maximum Newton iterations before giving up.
const MAX_ITERS: usize = 60;
/// Convergence tolerance on the residual infinity norm. The fastest rows
/// carry coefficients near 4e4 pu/s per pu of state, so 1e−9 here pins the
/// state to ~1e−13 pu.
const TOL: f64 = 1e-9;
/// Residual considered converged if the line search stalls at the
/// finite-difference noise floor of the Jacobian.
const STALL_OK: f64 = 1e-8;

/// Find the operating point with `rhs(x, u) = 0` for constant references
/// `u = [p_ref, q_ref]`.
///
/// Starts from a flat voltage profile with the power filters preloaded to
/// the references, which converges for every operating point in the normal
/// range. A custom warm start can be supplied for continuation sweeps.
pub fn find_equilibrium(
    params: &ModelParams,
    u: &InputVector,
    warm_start: Option<&StateVector>,
) -> Result<StateVector> {
    let mut x = match warm_start {
        Some(x0) => *x0,
        None => flat_start(u),
    };

    let mut f = residual(&x, u, params)?;
    let mut f_norm = inf_norm(&f);

    for _ in 0..MAX_ITERS {
        if f_norm < TOL {
            return Ok(x);
        }
        let jac = fd_jacobian(&x, u, params)?;
        let delta = jac
            .lu()
            .solve(&DVector::from_row_slice(&f))
            .ok_or_else(|| Error::Numerics("singular Jacobian in equilibrium solve".into()))?;

        // Backtracking line search on the residual norm.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let mut trial = x;
            for i in 0..N_STATES {
                trial[i] -= alpha * delta[i];
            }
            if let Ok(ft) = residual(&trial, u, params) {
                let ft_norm = inf_norm(&ft);
                if ft_norm.is_finite() && ft_norm < f_norm {
                    x = trial;
                    f = ft;
                    f_norm = ft_norm;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            if f_norm < STALL_OK {
                return Ok(x);
            }
            return Err(Error::Numerics(format!(
                "equilibrium line search stalled at residual {f_norm:.3e}"
            )));
        }
    }
    if f_norm < TOL {
        Ok(x)
    } else {
        Err(Error::Numerics(format!(
            "equilibrium Newton did not converge: residual {f_norm:.3e} after {MAX_ITERS} iters"
        )))
    }
}

/// Flat-start guess: unit real filter voltage, power filters preloaded.
fn flat_start(u: &InputVector) -> StateVector {
    let mut x = [0.0; N_STATES];
    x[idx::V_FILT_R] = 1.0;
    x[idx::P_M] = u[0];
    x[idx::Q_M] = u[1];
    x
}

fn residual(x: &StateVector, u: &InputVector, params: &ModelParams) -> Result<StateVector> {
    rhs(x, u, params)
}

fn inf_norm(v: &StateVector) -> f64 {
    v.iter().fold(0.0f64, |m, &a| m.max(a.abs()))
}

/// Forward-difference Jacobian of the rhs with per-component step scaling.
fn fd_jacobian(x: &StateVector, u: &InputVector, params: &ModelParams) -> Result<DMatrix<f64>> {
    let f0 = residual(x, u, params)?;
    let mut jac = DMatrix::zeros(N_STATES, N_STATES);
    for j in 0..N_STATES {
        let h = 1e-7 * x[j].abs().max(1.0);
        let mut xp = *x;
        xp[j] += h;
        let fp = residual(&xp, u, params)?;
        for i in 0..N_STATES {
            jac[(i, j)] = (fp[i] - f0[i]) / h;
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residual_vanishes_at_solution() {
        let p = ModelParams::default();
        for u in [[0.5, 0.0], [0.7, 0.0], [1.0, 0.3], [0.3, -0.2]] {
            let x = find_equilibrium(&p, &u, None).unwrap();
            let dx = rhs(&x, &u, &p).unwrap();
            let norm = dx.iter().fold(0.0f64, |m, &a| m.max(a.abs()));
            assert!(norm < 1e-8, "residual {norm} at u = {u:?}");
        }
    }

    #[test]
    fn integrator_states_pin_tracked_quantities() {
        // At a fixed point every integrator input is zero, so the measured
        // powers equal their references and the PLL q-voltage is zero.
        let p = ModelParams::default();
        let u = [0.8, 0.1];
        let x = find_equilibrium(&p, &u, None).unwrap();
        assert!((x[idx::P_M] - u[0]).abs() < 1e-8);
        assert!((x[idx::Q_M] - u[1]).abs() < 1e-8);
        assert!(x[idx::V_Q_PLL].abs() < 1e-8);
        assert!(x[idx::EPS_PLL].abs() < 1e-8);
    }

    #[test]
    fn warm_start_converges_to_same_point() {
        let p = ModelParams::default();
        let a = find_equilibrium(&p, &[0.5, 0.0], None).unwrap();
        let b = find_equilibrium(&p, &[0.7, 0.0], Some(&a)).unwrap();
        let c = find_equilibrium(&p, &[0.7, 0.0], None).unwrap();
        for i in 0..N_STATES {
            assert!((b[i] - c[i]).abs() < 1e-9, "state {i}: {} vs {}", b[i], c[i]);
        }
    }

    #[test]
    fn voltage_magnitude_is_physical() {
        let p = ModelParams::default();
        let x = find_equilibrium(&p, &[0.5, 0.0], None).unwrap();
        let vmag = (x[idx::V_FILT_R].powi(2) + x[idx::V_FILT_I].powi(2)).sqrt();
        assert!((0.9..1.1).contains(&vmag), "|v_filt| = {vmag}");
    }
}
