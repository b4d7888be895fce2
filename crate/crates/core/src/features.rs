//! Candidate-function library: builds the feature matrix Θ and canonical
//! term names from a declarative specification, and expands the true model
//! into exact library coefficients for use as a recovery oracle.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{ModelParams, N_STATES, STATE_NAMES};
use crate::sindy::SparseModel;

/// Declarative library description. The default spans the full converter
/// dynamics: constant + linear + degree-2 products + sin/cos of the PLL
/// angle + products of those with every non-angle column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LibrarySpec {
    pub include_constant: bool,
    /// 1 = linear only, 2 = linear plus pairwise products.
    pub poly_degree: u32,
    /// State columns treated as angles: they enter through sin/cos only
    /// and are excluded from the raw polynomial columns.
    pub trig_variables: Vec<String>,
    /// Include sin(angle)·v and cos(angle)·v for every non-angle column v.
    pub trig_cross: bool,
    /// Extra terms by canonical name, appended if not already present.
    pub custom_terms: Vec<String>,
}

impl Default for LibrarySpec {
    fn default() -> Self {
        LibrarySpec {
            include_constant: true,
            poly_degree: 2,
            trig_variables: vec!["theta_pll".to_string()],
            trig_cross: true,
            custom_terms: Vec::new(),
        }
    }
}

impl LibrarySpec {
    /// Polynomial-only variant (no trig columns): deliberately unable to
    /// represent the dq-projection rows, for misspecification experiments.
    pub fn polynomial_only() -> Self {
        LibrarySpec {
            trig_variables: Vec::new(),
            trig_cross: false,
            ..Default::default()
        }
    }
}

/// A single library term, indexed against dataset columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Term {
    Constant,
    Linear(usize),
    /// Product of two non-angle columns, stored with index i <= j.
    Product(usize, usize),
    Sin(usize),
    Cos(usize),
    /// sin(angle column) times a non-angle column.
    SinCross(usize, usize),
    CosCross(usize, usize),
}

impl Term {
    /// Canonical display name against a column-name table.
    pub fn name(&self, columns: &[String]) -> String {
        match *self {
            Term::Constant => "1".to_string(),
            Term::Linear(i) => columns[i].clone(),
            Term::Product(i, j) => format!("{}*{}", columns[i], columns[j]),
            Term::Sin(a) => format!("sin({})", columns[a]),
            Term::Cos(a) => format!("cos({})", columns[a]),
            Term::SinCross(a, i) => format!("sin({})*{}", columns[a], columns[i]),
            Term::CosCross(a, i) => format!("cos({})*{}", columns[a], columns[i]),
        }
    }

    /// Evaluate on one dataset row.
    pub fn eval(&self, row: &[f64]) -> f64 {
        match *self {
            Term::Constant => 1.0,
            Term::Linear(i) => row[i],
            Term::Product(i, j) => row[i] * row[j],
            Term::Sin(a) => row[a].sin(),
            Term::Cos(a) => row[a].cos(),
            Term::SinCross(a, i) => row[a].sin() * row[i],
            Term::CosCross(a, i) => row[a].cos() * row[i],
        }
    }

    /// Parse a canonical name back into a term. Inverse of [`Term::name`].
    pub fn parse(name: &str, columns: &[String]) -> Result<Term> {
        let col = |s: &str| -> Result<usize> {
            columns
                .iter()
                .position(|c| c == s)
                .ok_or_else(|| Error::Schema(format!("unknown column '{s}' in term '{name}'")))
        };
        if name == "1" {
            return Ok(Term::Constant);
        }
        if let Some(rest) = name.strip_prefix("sin(") {
            if let Some((inner, tail)) = rest.split_once(')') {
                let a = col(inner)?;
                return match tail.strip_prefix('*') {
                    None if tail.is_empty() => Ok(Term::Sin(a)),
                    Some(v) => Ok(Term::SinCross(a, col(v)?)),
                    _ => Err(Error::Schema(format!("malformed term '{name}'"))),
                };
            }
        }
        if let Some(rest) = name.strip_prefix("cos(") {
            if let Some((inner, tail)) = rest.split_once(')') {
                let a = col(inner)?;
                return match tail.strip_prefix('*') {
                    None if tail.is_empty() => Ok(Term::Cos(a)),
                    Some(v) => Ok(Term::CosCross(a, col(v)?)),
                    _ => Err(Error::Schema(format!("malformed term '{name}'"))),
                };
            }
        }
        if let Some((a, b)) = name.split_once('*') {
            let (i, j) = (col(a)?, col(b)?);
            return Ok(Term::Product(i.min(j), i.max(j)));
        }
        Ok(Term::Linear(col(name)?))
    }
}

/// Feature matrix: one column per term, one row per dataset sample.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub term_names: Vec<String>,
    /// samples × terms.
    pub values: DMatrix<f64>,
    /// Rank/degeneracy warnings discovered while building (zero-variance
    /// columns and the like).
    pub warnings: Vec<String>,
}

/// Resolve the ordered term list for a spec against dataset columns.
///
/// Order: constant; linear terms in dataset column order; degree-2
/// products in lexicographic index-pair order; sin then cos of each angle;
/// sin-crosses then cos-crosses over non-angle columns; custom terms last.
pub fn resolve_terms(spec: &LibrarySpec, columns: &[String]) -> Result<Vec<Term>> {
    if !(spec.poly_degree == 1 || spec.poly_degree == 2) {
        return Err(Error::Config(format!(
            "library.poly_degree must be 1 or 2, got {}",
            spec.poly_degree
        )));
    }
    let mut angles = Vec::new();
    for v in &spec.trig_variables {
        let i = columns
            .iter()
            .position(|c| c == v)
            .ok_or_else(|| Error::Config(format!("library.trig_variables: unknown column '{v}'")))?;
        if !STATE_NAMES.contains(&v.as_str()) {
            return Err(Error::Config(format!(
                "library.trig_variables: '{v}' is not a state column"
            )));
        }
        angles.push(i);
    }
    let non_angle: Vec<usize> = (0..columns.len()).filter(|i| !angles.contains(i)).collect();

    let mut terms = Vec::new();
    if spec.include_constant {
        terms.push(Term::Constant);
    }
    for &i in &non_angle {
        terms.push(Term::Linear(i));
    }
    if spec.poly_degree == 2 {
        for (a, &i) in non_angle.iter().enumerate() {
            for &j in &non_angle[a..] {
                terms.push(Term::Product(i, j));
            }
        }
    }
    for &a in &angles {
        terms.push(Term::Sin(a));
    }
    for &a in &angles {
        terms.push(Term::Cos(a));
    }
    if spec.trig_cross {
        for &a in &angles {
            for &i in &non_angle {
                terms.push(Term::SinCross(a, i));
            }
        }
        for &a in &angles {
            for &i in &non_angle {
                terms.push(Term::CosCross(a, i));
            }
        }
    }
    for custom in &spec.custom_terms {
        let t = Term::parse(custom, columns)?;
        if let Term::Product(i, j) = t {
            if angles.contains(&i) || angles.contains(&j) {
                return Err(Error::Config(format!(
                    "library.custom_terms: '{custom}' multiplies an angle column; angles enter through sin/cos only"
                )));
            }
        }
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    Ok(terms)
}

/// Build the feature matrix for a dataset.
pub fn build(spec: &LibrarySpec, ds: &Dataset) -> Result<FeatureMatrix> {
    let terms = resolve_terms(spec, &ds.column_names)?;
    let n = ds.n_rows();
    let m = terms.len();
    let mut values = DMatrix::zeros(n, m);
    for (r, row) in ds.x.iter().enumerate() {
        for (c, term) in terms.iter().enumerate() {
            values[(r, c)] = term.eval(row);
        }
    }
    let term_names: Vec<String> = terms.iter().map(|t| t.name(&ds.column_names)).collect();

    let mut warnings = Vec::new();
    for (c, term) in terms.iter().enumerate() {
        if matches!(term, Term::Constant) {
            continue;
        }
        let col = values.column(c);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &v in col.iter() {
            if !v.is_finite() {
                return Err(Error::Numerics(format!(
                    "non-finite value in feature column '{}'",
                    term_names[c]
                )));
            }
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if n > 0 && lo == hi {
            warnings.push(format!(
                "feature column '{}' is constant over the dataset; the library is rank deficient",
                term_names[c]
            ));
        }
    }
    Ok(FeatureMatrix {
        term_names,
        values,
        warnings,
    })
}

/// Exact coefficients of the true model expanded in the given library.
///
/// The grid node is eliminated through the linear node solve and the
/// converter voltage through the dq rotation, so every row is a finite
/// combination of constant, linear, bilinear, and trig-cross terms. If the
/// spec lacks any required term, an unrepresentable error lists the
/// missing term kinds.
pub fn ground_truth_coefficients(params: &ModelParams, spec: &LibrarySpec) -> Result<SparseModel> {
    let columns = crate::dataset::column_names();
    let terms = resolve_terms(spec, &columns)?;
    let names: Vec<String> = terms.iter().map(|t| t.name(&columns)).collect();
    let index: std::collections::HashMap<&str, usize> = names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let mut coeffs = vec![vec![0.0; terms.len()]; N_STATES];
    let mut missing: Vec<String> = Vec::new();
    {
        let mut put = |row: usize, name: String, value: f64| {
            if let Some(&c) = index.get(name.as_str()) {
                coeffs[row][c] += value;
            } else if !missing.contains(&name) {
                missing.push(name);
            }
        };
        expand_true_model(params, &mut put);
    }
    if !missing.is_empty() {
        let mut kinds: Vec<&str> = Vec::new();
        for name in &missing {
            let kind = match Term::parse(name, &columns) {
                Ok(Term::Constant) => "constant",
                Ok(Term::Linear(_)) => "linear",
                Ok(Term::Product(_, _)) => "degree-2 product",
                Ok(Term::Sin(_)) | Ok(Term::Cos(_)) => "sin/cos of angle",
                Ok(Term::SinCross(_, _)) | Ok(Term::CosCross(_, _)) => "trig-cross",
                Err(_) => "unparseable",
            };
            if !kinds.contains(&kind) {
                kinds.push(kind);
            }
        }
        return Err(Error::Schema(format!(
            "library cannot represent the true dynamics; missing term kinds: {} (e.g. {})",
            kinds.join(", "),
            missing[..missing.len().min(3)].join(", ")
        )));
    }

    Ok(SparseModel {
        target_names: crate::dataset::target_names(),
        term_names: names,
        coefficients: coeffs,
        threshold: 0.0,
        ridge: 0.0,
        iterations_used: vec![0; N_STATES],
        warnings: Vec::new(),
    })
}

/// Emit every (target row, term name, coefficient) of the expanded model
/// through `put`. Shared by the oracle above; see the model module for the
/// unexpanded equations.
fn expand_true_model<F: FnMut(usize, String, f64)>(p: &ModelParams, put: &mut F) {
    let y1 = p.y1();
    let yf = p.yf();
    // Node blend M = Yf/(Y1+Yf) and source term N·v̄2 = (Y1/(Y1+Yf))·v̄2.
    let (sg, sb) = (y1.g + yf.g, y1.b + yf.b);
    let den = sg * sg + sb * sb;
    let m_re = (yf.g * sg + yf.b * sb) / den;
    let m_im = (yf.b * sg - yf.g * sb) / den;
    let n_re = (y1.g * sg + y1.b * sb) / den;
    let n_im = (y1.b * sg - y1.g * sb) / den;
    let v2r = p.v2_mag * p.theta2.cos();
    let v2i = p.v2_mag * p.theta2.sin();
    let (nv2_re, nv2_im) = (n_re * v2r - n_im * v2i, n_re * v2i + n_im * v2r);
    let wb = p.omega_b;

    let prod = |a: &str, b: &str| -> String {
        let ia = STATE_NAMES.iter().position(|s| *s == a).unwrap_or(15);
        let ib = STATE_NAMES.iter().position(|s| *s == b).unwrap_or(15);
        if ia <= ib {
            format!("{a}*{b}")
        } else {
            format!("{b}*{a}")
        }
    };

    // Rows 0,1: converter-side current. The decoupling and feed-forward
    // fold the commanded voltage into linear, bilinear, and trig-cross
    // terms of the states.
    for (r, sgn) in [(0usize, 1.0f64), (1, -1.0)] {
        let a = wb / p.l_f;
        let own_v = if r == 0 { "v_filt_r" } else { "v_filt_i" };
        let own_i = if r == 0 { "i_cv_r" } else { "i_cv_i" };
        let other_i = if r == 0 { "i_cv_i" } else { "i_cv_r" };
        put(r, own_v.into(), a * (p.k_ffv - 1.0));
        put(r, own_i.into(), -a * (p.kp_c + p.r_f));
        // Nominal decoupling cancels the cross coupling exactly when
        // omega_s = 1; the residual scales with (omega_s − 1)·l_f.
        put(r, other_i.into(), a * sgn * (p.omega_s * p.l_f - p.l_f));
        // Frequency-deviation part of the decoupling term.
        put(r, prod("v_q_pll", other_i), -a * sgn * p.l_f * p.kp_pll);
        put(r, prod("eps_pll", other_i), -a * sgn * p.l_f * p.ki_pll);
        // Rotated dq commands: row 0 takes cos·A_d − sin·A_q, row 1 takes
        // sin·A_d + cos·A_q, where A_d/A_q are the inner PI outputs.
        let a_d = [
            ("q_ref", p.kp_c * p.kp_q),
            ("q_m", -p.kp_c * p.kp_q),
            ("sigma_q", p.kp_c * p.ki_q),
            ("gamma_d", p.ki_c),
        ];
        let a_q = [
            ("p_ref", p.kp_c * p.kp_p),
            ("p_m", -p.kp_c * p.kp_p),
            ("sigma_p", p.kp_c * p.ki_p),
            ("gamma_q", p.ki_c),
        ];
        if r == 0 {
            for (nm, v) in a_d {
                put(r, format!("cos(theta_pll)*{nm}"), a * v);
            }
            for (nm, v) in a_q {
                put(r, format!("sin(theta_pll)*{nm}"), -a * v);
            }
        } else {
            for (nm, v) in a_d {
                put(r, format!("sin(theta_pll)*{nm}"), a * v);
            }
            for (nm, v) in a_q {
                put(r, format!("cos(theta_pll)*{nm}"), a * v);
            }
        }
    }

    // Rows 2,3: capacitor voltage.
    let a = wb / p.c_f;
    put(2, "i_cv_r".into(), a);
    put(2, "i_filt_r".into(), -a);
    put(2, "v_filt_i".into(), wb * p.omega_s);
    put(3, "i_cv_i".into(), a);
    put(3, "i_filt_i".into(), -a);
    put(3, "v_filt_r".into(), -wb * p.omega_s);

    // Rows 4,5: grid-side current with v_grid = M·v_filt + N·v̄2.
    let a = wb / p.l_g;
    put(4, "v_filt_r".into(), a * (1.0 - m_re));
    put(4, "v_filt_i".into(), a * m_im);
    put(4, "i_filt_r".into(), -a * p.r_g);
    put(4, "i_filt_i".into(), wb * p.omega_s);
    put(4, "1".into(), -a * nv2_re);
    put(5, "v_filt_i".into(), a * (1.0 - m_re));
    put(5, "v_filt_r".into(), -a * m_im);
    put(5, "i_filt_i".into(), -a * p.r_g);
    put(5, "i_filt_r".into(), -wb * p.omega_s);
    put(5, "1".into(), -a * nv2_im);

    // Rows 6-8: PLL.
    put(6, "sin(theta_pll)*v_filt_r".into(), -p.l_lp);
    put(6, "cos(theta_pll)*v_filt_i".into(), p.l_lp);
    put(6, "v_q_pll".into(), -p.l_lp);
    put(7, "v_q_pll".into(), 1.0);
    put(8, "v_q_pll".into(), wb * p.kp_pll);
    put(8, "eps_pll".into(), wb * p.ki_pll);
    put(8, "1".into(), wb * (1.0 - p.omega_s));

    // Rows 9-12: outer power control.
    put(9, "p_ref".into(), 1.0);
    put(9, "p_m".into(), -1.0);
    put(10, prod("v_filt_r", "i_filt_r"), p.omega_z);
    put(10, prod("v_filt_i", "i_filt_i"), p.omega_z);
    put(10, "p_m".into(), -p.omega_z);
    put(11, "q_ref".into(), 1.0);
    put(11, "q_m".into(), -1.0);
    put(12, prod("v_filt_r", "i_filt_i"), -p.omega_f);
    put(12, prod("v_filt_i", "i_filt_r"), p.omega_f);
    put(12, "q_m".into(), -p.omega_f);

    // Rows 13,14: inner-loop integrators (reference minus dq-projected
    // converter current).
    put(13, "q_ref".into(), p.kp_q);
    put(13, "q_m".into(), -p.kp_q);
    put(13, "sigma_q".into(), p.ki_q);
    put(13, "cos(theta_pll)*i_cv_r".into(), -1.0);
    put(13, "sin(theta_pll)*i_cv_i".into(), -1.0);
    put(14, "p_ref".into(), p.kp_p);
    put(14, "p_m".into(), -p.kp_p);
    put(14, "sigma_p".into(), p.ki_p);
    put(14, "sin(theta_pll)*i_cv_r".into(), 1.0);
    put(14, "cos(theta_pll)*i_cv_i".into(), -1.0);
}
