//! Physical parameters and controller gains of the grid-following
//! converter model, in per unit on the converter base.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complete parameter set: network, LCL filter, PLL, outer power control,
/// and inner current control. All impedance-like quantities are per unit;
/// `omega_b` is the angular base in rad/s and `omega_s` the synchronous
/// speed in pu (1.0 at nominal frequency).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelParams {
    // Network: infinite bus v2 behind an (r_line + j x_line) branch joined
    // to the grid-side inductor at the algebraic grid node.
    pub r_line: f64,
    pub x_line: f64,
    pub v2_mag: f64,
    pub theta2: f64,

    // LCL filter.
    pub l_f: f64,
    pub r_f: f64,
    pub c_f: f64,
    pub l_g: f64,
    pub r_g: f64,

    pub omega_b: f64,
    pub omega_s: f64,

    // PLL: low-pass pole on the q-axis voltage and PI tracking gains.
    pub l_lp: f64,
    pub kp_pll: f64,
    pub ki_pll: f64,

    // Outer power control: measurement filter poles and PI gains.
    pub omega_z: f64,
    pub omega_f: f64,
    pub kp_p: f64,
    pub ki_p: f64,
    pub kp_q: f64,
    pub ki_q: f64,

    // Inner current control: PI gains and voltage feed-forward weight.
    pub kp_c: f64,
    pub ki_c: f64,
    pub k_ffv: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams {
            r_line: 0.0,
            x_line: 0.0020625,
            v2_mag: 1.0,
            theta2: 0.0,
            l_f: 0.009,
            r_f: 0.016,
            c_f: 2.5,
            l_g: 0.002,
            r_g: 0.003,
            omega_b: 2.0 * std::f64::consts::PI * 60.0,
            omega_s: 1.0,
            l_lp: 500.0,
            kp_pll: 0.2,
            ki_pll: 5.0,
            omega_z: 2.0 * std::f64::consts::PI * 20.0,
            omega_f: 2.0 * std::f64::consts::PI * 20.0,
            kp_p: 1.0,
            ki_p: 50.0,
            kp_q: 1.0,
            ki_q: 50.0,
            // The converter must actively damp the LC resonance of this
            // plant: with k_ffv = 1 the converter branch degenerates to a
            // current source and the filter resonance is unstable for any
            // PLL/outer-loop tuning. Negative feed-forward plus a small
            // proportional gain places the resonant pair near −1700 ± 4400j.
            kp_c: 0.15,
            ki_c: 6.6,
            k_ffv: -1.0,
        }
    }
}

/// A complex admittance split into rectangular components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Admittance {
    pub g: f64,
    pub b: f64,
}

/// Just the controller gains, extracted for dataset provenance metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSet {
    pub l_lp: f64,
    pub kp_pll: f64,
    pub ki_pll: f64,
    pub omega_z: f64,
    pub omega_f: f64,
    pub kp_p: f64,
    pub ki_p: f64,
    pub kp_q: f64,
    pub ki_q: f64,
    pub kp_c: f64,
    pub ki_c: f64,
    pub k_ffv: f64,
}

impl ModelParams {
    /// Line admittance Y1 = 1/(r_line + j·x_line).
    pub fn y1(&self) -> Admittance {
        Self::invert(self.r_line, self.x_line)
    }

    /// Grid-side filter branch admittance Yf = 1/(r_g + j·omega_s·l_g).
    pub fn yf(&self) -> Admittance {
        Self::invert(self.r_g, self.omega_s * self.l_g)
    }

    fn invert(r: f64, x: f64) -> Admittance {
        let d = r * r + x * x;
        Admittance {
            g: r / d,
            b: -x / d,
        }
    }

    /// The controller-gain subset, for provenance records.
    pub fn gain_set(&self) -> GainSet {
        GainSet {
            l_lp: self.l_lp,
            kp_pll: self.kp_pll,
            ki_pll: self.ki_pll,
            omega_z: self.omega_z,
            omega_f: self.omega_f,
            kp_p: self.kp_p,
            ki_p: self.ki_p,
            kp_q: self.kp_q,
            ki_q: self.ki_q,
            kp_c: self.kp_c,
            ki_c: self.ki_c,
            k_ffv: self.k_ffv,
        }
    }

    /// Validate physical plausibility; returns the first violated
    /// constraint as a config error with a field path.
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.x_line", self.x_line),
            ("model.l_f", self.l_f),
            ("model.c_f", self.c_f),
            ("model.l_g", self.l_g),
            ("model.omega_b", self.omega_b),
            ("model.v2_mag", self.v2_mag),
            ("model.l_lp", self.l_lp),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        let non_negative = [
            ("model.r_line", self.r_line),
            ("model.r_f", self.r_f),
            ("model.r_g", self.r_g),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!(
                    "{name} must be non-negative, got {v}"
                )));
            }
        }
        // The node solve needs Y1 + Yf away from zero; with passive branch
        // values the sum can only degenerate if both branches do.
        let y1 = self.y1();
        let yf = self.yf();
        let sum = ((y1.g + yf.g).powi(2) + (y1.b + yf.b).powi(2)).sqrt();
        let scale = (y1.g * y1.g + y1.b * y1.b).sqrt();
        if sum < 1e-12 * scale {
            return Err(Error::Numerics(
                "degenerate network: |Y1 + Yf| vanishes relative to |Y1|".into(),
            ));
        }
        Ok(())
    }
}
