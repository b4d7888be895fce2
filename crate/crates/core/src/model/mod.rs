//! Grid-following converter model: parameters, state layout, dynamics, and
//! the equilibrium solver.

pub mod dynamics;
pub mod equilibrium;
pub mod params;
pub mod state;

pub use dynamics::{algebraic_outputs, rhs, solve_grid_node, AlgebraicOutputs};
pub use equilibrium::find_equilibrium;
pub use params::{Admittance, GainSet, ModelParams};
pub use state::{
    idx, state_index, InputVector, StateVector, INPUT_NAMES, N_INPUTS, N_STATES, STATE_NAMES,
};
