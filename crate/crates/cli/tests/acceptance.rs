//! Acceptance gate for the toolkit: nine checks, one per release
//! criterion, each printing a single pass/fail line with its measured
//! numbers (`cargo test --test acceptance -- --nocapture` shows them all).
//!
//! Wherever a criterion has an exact expectation, the expected value is
//! recomputed here through an independent route — a complex-arithmetic
//! transcription of the model, a hand-rolled least-squares solver, an
//! exhaustive expression enumeration, central finite differences — rather
//! than trusted from the library under test.

use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use gflid_core::config::{DsrConfig, DsrEngine, PipelineConfig};
use gflid_core::dataset::{build_dataset, column_names, load_csv, target_names, DerivativeMode};
use gflid_core::features::{build, ground_truth_coefficients, LibrarySpec};
use gflid_core::metrics::{compare_support, r2};
use gflid_core::model::{
    algebraic_outputs, find_equilibrium, idx, rhs, solve_grid_node, InputVector, ModelParams,
    StateVector, N_STATES,
};
use gflid_core::sim::{integrate, RefField, ReferenceSchedule, ScheduleEvent};
use gflid_core::sindy::{predict, stlsq};
use gflid_core::symreg::{evaluate, search, train, ExpressionTree, Grammar, Policy, Token};

// ---------------------------------------------------------------------------
// Shared plumbing.

/// Print the criterion verdict line, then fail the test if it did not hold.
fn verdict(n: usize, label: &str, ok: bool, detail: &str) {
    let status = if ok { "pass" } else { "FAIL" };
    println!("[criterion {n}] {label}: {status} — {detail}");
    assert!(ok, "[criterion {n}] {label}: FAIL — {detail}");
}

/// The baseline protocol: equilibrium at (0.5, 0) pu, then steps to
/// p_ref = 0.7 at 0.3 s and q_ref = 0.2 at 0.6 s.
fn two_step_schedule() -> ReferenceSchedule {
    ReferenceSchedule {
        initial: [0.5, 0.0],
        events: vec![
            ScheduleEvent {
                time: 0.3,
                field: RefField::PRef,
                value: 0.7,
            },
            ScheduleEvent {
                time: 0.6,
                field: RefField::QRef,
                value: 0.2,
            },
        ],
    }
}

fn repo_config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}

// ---------------------------------------------------------------------------
// Criterion 1 — model fidelity against an independent transcription.
//
// The oracle below re-derives the whole right-hand side in complex phasor
// arithmetic: rotations as multiplication by e^{±jθ}, the grid node by
// complex division, powers as v·conj(i). The library computes the same
// quantities in rectangular components, so agreement is a genuine
// cross-check of the algebra, not of shared code.

struct OracleOutputs {
    dx: [f64; N_STATES],
    v_grid: Complex64,
    v_dq_filt: Complex64,
    i_dq_cv: Complex64,
    i_dq_ref: Complex64,
    v_cv: Complex64,
    omega_pll: f64,
}

fn oracle_rhs(x: &StateVector, u: &InputVector, p: &ModelParams) -> OracleOutputs {
    let j = Complex64::i();
    let i_cv = Complex64::new(x[idx::I_CV_R], x[idx::I_CV_I]);
    let v_f = Complex64::new(x[idx::V_FILT_R], x[idx::V_FILT_I]);
    let i_g = Complex64::new(x[idx::I_FILT_R], x[idx::I_FILT_I]);
    let theta = x[idx::THETA_PLL];

    // Grid node from the two branch impedances and complex division.
    let y1 = Complex64::new(p.r_line, p.x_line).inv();
    let yf = Complex64::new(p.r_g, p.omega_s * p.l_g).inv();
    let v2 = Complex64::from_polar(p.v2_mag, p.theta2);
    let v_grid = (y1 * v2 + yf * v_f) / (y1 + yf);

    // PLL frame: dq = e^{-jθ} · rectangular.
    let rot = (-j * theta).exp();
    let v_dq = rot * v_f;
    let i_dq = rot * i_cv;
    let omega_pll = p.kp_pll * x[idx::V_Q_PLL] + p.ki_pll * x[idx::EPS_PLL] + 1.0;

    // Outer loops (cross-paired), inner PI, decoupling, feed-forward.
    let i_ref = Complex64::new(
        p.kp_q * (u[1] - x[idx::Q_M]) + p.ki_q * x[idx::SIGMA_Q],
        p.kp_p * (u[0] - x[idx::P_M]) + p.ki_p * x[idx::SIGMA_P],
    );
    let gamma = Complex64::new(x[idx::GAMMA_D], x[idx::GAMMA_Q]);
    let v_pi = p.kp_c * (i_ref - i_dq) + p.ki_c * gamma;
    let v_cv_dq = v_pi + j * (omega_pll * p.l_f) * i_dq + p.k_ffv * v_dq;
    let v_cv = rot.conj() * v_cv_dq;

    // Branch dynamics as complex first-order equations.
    let di_cv =
        (p.omega_b / p.l_f) * (v_cv - v_f - Complex64::new(p.r_f, p.omega_s * p.l_f) * i_cv);
    let dv_f = (p.omega_b / p.c_f) * (i_cv - i_g - j * (p.omega_s * p.c_f) * v_f);
    let di_g =
        (p.omega_b / p.l_g) * (v_f - v_grid - Complex64::new(p.r_g, p.omega_s * p.l_g) * i_g);

    // Measured complex power at the filter bus.
    let s = v_f * i_g.conj();
    let dgamma = i_ref - i_dq;

    let mut dx = [0.0; N_STATES];
    dx[idx::I_CV_R] = di_cv.re;
    dx[idx::I_CV_I] = di_cv.im;
    dx[idx::V_FILT_R] = dv_f.re;
    dx[idx::V_FILT_I] = dv_f.im;
    dx[idx::I_FILT_R] = di_g.re;
    dx[idx::I_FILT_I] = di_g.im;
    dx[idx::V_Q_PLL] = p.l_lp * (v_dq.im - x[idx::V_Q_PLL]);
    dx[idx::EPS_PLL] = x[idx::V_Q_PLL];
    dx[idx::THETA_PLL] = p.omega_b * (omega_pll - p.omega_s);
    dx[idx::SIGMA_P] = u[0] - x[idx::P_M];
    dx[idx::P_M] = p.omega_z * (s.re - x[idx::P_M]);
    dx[idx::SIGMA_Q] = u[1] - x[idx::Q_M];
    dx[idx::Q_M] = p.omega_f * (s.im - x[idx::Q_M]);
    dx[idx::GAMMA_D] = dgamma.re;
    dx[idx::GAMMA_Q] = dgamma.im;

    OracleOutputs {
        dx,
        v_grid,
        v_dq_filt: v_dq,
        i_dq_cv: i_dq,
        i_dq_ref: i_ref,
        v_cv,
        omega_pll,
    }
}

#[test]
fn criterion_1_model_fidelity() {
    let t0 = Instant::now();
    let p = ModelParams::default();
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    let mut max_dev = 0.0f64;
    let mut max_residual = 0.0f64;

    let scaled = |a: f64, b: f64| (a - b).abs() / 1.0f64.max(b.abs());

    for _ in 0..1000 {
        let mut x = [0.0; N_STATES];
        for (i, v) in x.iter_mut().enumerate() {
            *v = match i {
                idx::THETA_PLL => rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
                idx::V_Q_PLL | idx::EPS_PLL => rng.gen_range(-0.3..0.3),
                idx::SIGMA_P | idx::SIGMA_Q | idx::GAMMA_D | idx::GAMMA_Q => {
                    rng.gen_range(-0.5..0.5)
                }
                _ => rng.gen_range(-1.5..1.5),
            };
        }
        let u = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];

        let want = oracle_rhs(&x, &u, &p);
        let got_dx = rhs(&x, &u, &p).unwrap();
        let got = algebraic_outputs(&x, &u, &p).unwrap();

        for (a, b) in got_dx.iter().zip(&want.dx) {
            max_dev = max_dev.max(scaled(*a, *b));
        }
        for (a, b) in [
            (got.v_grid_r, want.v_grid.re),
            (got.v_grid_i, want.v_grid.im),
            (got.v_d_filt, want.v_dq_filt.re),
            (got.v_q_filt, want.v_dq_filt.im),
            (got.i_d_cv, want.i_dq_cv.re),
            (got.i_q_cv, want.i_dq_cv.im),
            (got.i_d_ref, want.i_dq_ref.re),
            (got.i_q_ref, want.i_dq_ref.im),
            (got.v_cv_r, want.v_cv.re),
            (got.v_cv_i, want.v_cv.im),
            (got.omega_pll, want.omega_pll),
        ] {
            max_dev = max_dev.max(scaled(a, b));
        }

        // KCL residual at the node the library solved, in complex form.
        let (vr, vi) = solve_grid_node(x[idx::V_FILT_R], x[idx::V_FILT_I], &p).unwrap();
        let v_node = Complex64::new(vr, vi);
        let y1 = Complex64::new(p.r_line, p.x_line).inv();
        let yf = Complex64::new(p.r_g, p.omega_s * p.l_g).inv();
        let v2 = Complex64::from_polar(p.v2_mag, p.theta2);
        let v_f = Complex64::new(x[idx::V_FILT_R], x[idx::V_FILT_I]);
        let residual = ((v_node - v2) * y1 + (v_node - v_f) * yf).norm();
        max_residual = max_residual.max(residual);
    }

    let elapsed = t0.elapsed().as_secs_f64();
    let ok = max_dev < 1e-12 && max_residual < 1e-12 && elapsed < 1.0;
    verdict(
        1,
        "model fidelity",
        ok,
        &format!(
            "max row-scaled deviation {max_dev:.2e}, max node residual {max_residual:.2e} \
             over 1000 random points, {elapsed:.2} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2 — stability gate on the baseline protocol.

#[test]
fn criterion_2_stability_gate() {
    let t0 = Instant::now();
    let p = ModelParams::default();
    let x0 = find_equilibrium(&p, &[0.5, 0.0], None).unwrap();
    let traj = integrate(&p, &x0, &two_step_schedule(), 2e-5, 1.0).unwrap();

    let mut worst_p = 0.0f64;
    let mut worst_q = 0.0f64;
    for (t, x) in traj.times.iter().zip(&traj.states) {
        if *t >= 0.55 {
            worst_p = worst_p.max((x[idx::P_M] - 0.7).abs());
        }
        if *t >= 0.85 {
            worst_q = worst_q.max((x[idx::Q_M] - 0.2).abs());
        }
    }

    let elapsed = t0.elapsed().as_secs_f64();
    let ok = worst_p < 0.01 && worst_q < 0.01 && elapsed < 30.0;
    verdict(
        2,
        "stability gate",
        ok,
        &format!(
            "|p_m − 0.7| ≤ {worst_p:.2e} after 0.55 s, |q_m − 0.2| ≤ {worst_q:.2e} \
             after 0.85 s, {elapsed:.2} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — fourth-order convergence of the integrator on the full
// model, measured as the error ratio between dt and dt/2 runs against a
// dt/8 reference.

#[test]
fn criterion_3_integrator_order() {
    let t0 = Instant::now();
    let p = ModelParams::default();
    let x0 = find_equilibrium(&p, &[0.5, 0.0], None).unwrap();
    let schedule = two_step_schedule();
    let dt = 5e-5;

    let sup_error = |coarse: &[StateVector], coarse_dt: f64, fine: &[StateVector], fine_dt: f64| {
        let every = (coarse_dt / fine_dt).round() as usize;
        coarse
            .iter()
            .enumerate()
            .map(|(k, x)| {
                let r = &fine[k * every];
                x.iter()
                    .zip(r)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    };

    let run = |step: f64| integrate(&p, &x0, &schedule, step, 1.0).unwrap().states;
    let coarse = run(dt);
    let half = run(dt / 2.0);
    let reference = run(dt / 8.0);

    let err_coarse = sup_error(&coarse, dt, &reference, dt / 8.0);
    let err_half = sup_error(&half, dt / 2.0, &reference, dt / 8.0);
    let ratio = err_coarse / err_half;

    let elapsed = t0.elapsed().as_secs_f64();
    let ok = (12.0..=20.0).contains(&ratio);
    verdict(
        3,
        "integrator order",
        ok,
        &format!(
            "error {err_coarse:.2e} at dt={dt:.0e} vs {err_half:.2e} at dt/2, \
             ratio {ratio:.2} (expect ≈16), {elapsed:.2} s"
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4 — exact sparse recovery on the identification protocol.

#[test]
fn criterion_4_sindy_exact_recovery() {
    let t0 = Instant::now();
    let cfg = PipelineConfig::load(&repo_config("identification.toml")).unwrap();
    let x0 = find_equilibrium(&cfg.model, &cfg.schedule.initial, None).unwrap();
    let traj = integrate(&cfg.model, &x0, &cfg.schedule, cfg.sim.dt, cfg.sim.t_end).unwrap();
    let ds = build_dataset(&traj, DerivativeMode::Exact, cfg.dataset.stride).unwrap();

    let theta = build(&cfg.library, &ds).unwrap();
    let targets: Vec<Vec<f64>> = (0..N_STATES)
        .map(|i| ds.dxdt.iter().map(|row| row[i]).collect())
        .collect();
    let model = stlsq(&theta, &targets, &target_names(), 1e-4, 0.0).unwrap();

    let truth = ground_truth_coefficients(&cfg.model, &cfg.library).unwrap();
    let rec = compare_support(&model, &truth).unwrap();

    let preds = predict(&model, &theta).unwrap();
    let min_r2 = targets
        .iter()
        .zip(&preds)
        .map(|(y, yhat)| r2(y, yhat).unwrap())
        .fold(f64::INFINITY, f64::min);

    let elapsed = t0.elapsed().as_secs_f64();
    let ok = rec.precision == 1.0
        && rec.recall == 1.0
        && rec.max_rel_error < 1e-6
        && min_r2 >= 0.999999
        && elapsed < 60.0;
    verdict(
        4,
        "sindy exact recovery",
        ok,
        &format!(
            "precision {:.3}, recall {:.3}, max rel coeff error {:.2e}, min r2 {:.9}, {elapsed:.2} s",
            rec.precision, rec.recall, rec.max_rel_error, min_r2
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5 — STLSQ with threshold 0, ridge 0 equals ordinary least
// squares. The OLS oracle is a from-scratch normal-equations solve with
// Gaussian elimination — no shared code with the library's solver.

fn ols_oracle(x: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let m = x[0].len();
    // Build [XᵀX | Xᵀy] and eliminate with partial pivoting.
    let mut aug = vec![vec![0.0f64; m + 1]; m];
    for (i, row) in aug.iter_mut().enumerate() {
        for jj in 0..m {
            row[jj] = x.iter().map(|r| r[i] * r[jj]).sum();
        }
        row[m] = x.iter().zip(y).map(|(r, yv)| r[i] * yv).sum();
    }
    for col in 0..m {
        let pivot = (col..m).max_by(|&a, &b| aug[a][col].abs().total_cmp(&aug[b][col].abs()));
        let pivot = pivot.unwrap();
        aug.swap(col, pivot);
        let d = aug[col][col];
        for v in &mut aug[col] {
            *v /= d;
        }
        for r in 0..m {
            if r != col {
                let f = aug[r][col];
                for c in 0..=m {
                    aug[r][c] -= f * aug[col][c];
                }
            }
        }
    }
    aug.iter().map(|row| row[m]).collect()
}

#[test]
fn criterion_5_stlsq_matches_ols() {
    let t0 = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(55);
    let (n, m) = (1000, 20);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let beta_true: Vec<f64> = (0..m).map(|i| (i as f64 * 0.7).sin() * 3.0).collect();
    let y: Vec<f64> = rows
        .iter()
        .map(|r| {
            let clean: f64 = r.iter().zip(&beta_true).map(|(a, b)| a * b).sum();
            clean + 0.01 * rng.gen_range(-1.0..1.0)
        })
        .collect();

    let names: Vec<String> = (0..m).map(|i| format!("x{i}")).collect();
    let values = nalgebra::DMatrix::from_fn(n, m, |r, c| rows[r][c]);
    let theta = gflid_core::features::FeatureMatrix {
        term_names: names,
        values,
        warnings: Vec::new(),
    };
    let model = stlsq(&theta, &[y.clone()], &["y".to_string()], 0.0, 0.0).unwrap();

    let want = ols_oracle(&rows, &y);
    let max_dev = model.coefficients[0]
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let elapsed = t0.elapsed().as_secs_f64();
    let ok = max_dev < 1e-10;
    verdict(
        5,
        "stlsq equals ols",
        ok,
        &format!("max |stlsq − ols| {max_dev:.2e} on a 1000×20 problem, {elapsed:.2} s"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6 — the symbolic search recovers the integrator rows, checked
// against an exhaustive enumeration certifying that the difference of the
// reference and the measured power is the unique exact short expression.

/// All complete prefix sequences of at most `max_len` tokens.
fn enumerate_trees(grammar: &Grammar, max_len: usize) -> Vec<Vec<Token>> {
    let mut out = Vec::new();
    let mut state = gflid_core::symreg::GenState::new();
    fn recurse(
        grammar: &Grammar,
        state: &mut gflid_core::symreg::GenState,
        max_len: usize,
        out: &mut Vec<Vec<Token>>,
    ) {
        if state.complete() {
            out.push(state.tokens.clone());
            return;
        }
        if state.tokens.len() >= max_len {
            return;
        }
        let mask = state.mask(grammar);
        for (k, allowed) in mask.iter().enumerate() {
            if !allowed {
                continue;
            }
            let tok = grammar.token(k);
            let before = state.tokens.len();
            state.push(tok);
            recurse(grammar, state, max_len, out);
            state.truncate(before);
        }
    }
    recurse(grammar, &mut state, max_len, &mut out);
    out
}

/// Least RMSE a tree can reach with its constants fitted optimally.
/// Constant-free trees are evaluated directly; for the short one-constant
/// forms the optimum is closed-form; fully constant trees reduce to the
/// mean. Anything else at these lengths cannot reach zero unless one of
/// the algebraic certificates below fires, so a generic lower bound of
/// zero is never claimed — the function returns an upper-bounded optimum
/// that is exact for every ≤3-token tree.
fn best_rmse(tree_tokens: &[Token], grammar: &Grammar, rows: &[[f64; 17]], y: &[f64]) -> f64 {
    let n_const = tree_tokens
        .iter()
        .filter(|t| matches!(t, Token::Const))
        .count();
    let n = y.len() as f64;
    let rmse = |res: f64| (res / n).sqrt();

    if n_const == 0 {
        let tree = ExpressionTree::new(tree_tokens.to_vec(), Vec::new());
        let out = evaluate(&tree, rows).unwrap();
        if out.flagged {
            return f64::INFINITY;
        }
        let ss: f64 = out
            .values
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        return rmse(ss);
    }

    // Every constant: best fit is the mean of y.
    if tree_tokens
        .iter()
        .all(|t| !matches!(t, Token::Var(_)))
    {
        let mean = y.iter().sum::<f64>() / n;
        let ss: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
        return rmse(ss);
    }

    // One constant among ≤3 tokens: op(C, x), op(x, C), or unary(C)
    // (handled above). Reduce each to a scalar least-squares problem on a
    // transformed pair (g, h): minimize ‖h − c·g‖ or an exact shift.
    assert!(
        tree_tokens.len() <= 3 && n_const == 1,
        "enumeration oracle only certifies trees up to 3 tokens, got {tree_tokens:?}"
    );
    let var_pos = tree_tokens
        .iter()
        .position(|t| matches!(t, Token::Var(_)))
        .unwrap();
    let Token::Var(col) = tree_tokens[var_pos] else {
        unreachable!()
    };
    let xcol: Vec<f64> = rows.iter().map(|r| r[col]).collect();
    let op = tree_tokens[0];
    let const_first = var_pos == 2;

    let shift_optimum = |target: &[f64]| {
        // minimize over c of Σ (target_i − c)² → c = mean.
        let mean = target.iter().sum::<f64>() / n;
        let ss: f64 = target.iter().map(|v| (v - mean) * (v - mean)).sum();
        rmse(ss)
    };
    let scale_optimum = |g: &[f64], h: &[f64]| {
        // minimize over c of Σ (h_i − c·g_i)².
        let gg: f64 = g.iter().map(|v| v * v).sum();
        let gh: f64 = g.iter().zip(h).map(|(a, b)| a * b).sum();
        let c = if gg > 0.0 { gh / gg } else { 0.0 };
        let ss: f64 = g
            .iter()
            .zip(h)
            .map(|(gv, hv)| (hv - c * gv) * (hv - c * gv))
            .sum();
        rmse(ss)
    };

    match (op, const_first) {
        // C + x or x + C: residual y − x is matched by a constant.
        (Token::Add, _) => {
            let t: Vec<f64> = y.iter().zip(&xcol).map(|(a, b)| a - b).collect();
            shift_optimum(&t)
        }
        // C − x: y + x constant; x − C: x − y constant.
        (Token::Sub, true) => {
            let t: Vec<f64> = y.iter().zip(&xcol).map(|(a, b)| a + b).collect();
            shift_optimum(&t)
        }
        (Token::Sub, false) => {
            let t: Vec<f64> = xcol.iter().zip(y).map(|(a, b)| a - b).collect();
            shift_optimum(&t)
        }
        // C · x, x · C, and x / C are all scalar-gain fits of y on x.
        (Token::Mul, _) | (Token::Div, false) => scale_optimum(&xcol, y),
        // C / x: y ≈ c·(1/x) — a scalar fit on the reciprocal; rows where
        // x vanishes make the form unusable, matching the guarded engine.
        (Token::Div, true) => {
            if xcol.iter().any(|v| v.abs() < 1e-9) {
                f64::INFINITY
            } else {
                let ginv: Vec<f64> = xcol.iter().map(|v| 1.0 / v).collect();
                scale_optimum(&ginv, y)
            }
        }
        _ => unreachable!("3-token tree with a constant must be binary-rooted"),
    }
}

#[test]
fn criterion_6_dsr_sanity_targets() {
    let p = ModelParams::default();
    let x0 = find_equilibrium(&p, &[0.5, 0.0], None).unwrap();
    let traj = integrate(&p, &x0, &two_step_schedule(), 2e-5, 1.0).unwrap();
    let ds = build_dataset(&traj, DerivativeMode::Exact, 10).unwrap();
    let grammar = Grammar::new(ds.column_names.clone(), 32).unwrap();

    let cases = [
        (idx::SIGMA_P, "d_sigma_p", "(p_ref - p_m)"),
        (idx::SIGMA_Q, "d_sigma_q", "(q_ref - q_m)"),
    ];

    let mut details = Vec::new();
    let mut ok = true;
    for (state, name, expect_infix) in cases {
        let y: Vec<f64> = ds.dxdt.iter().map(|row| row[state]).collect();
        let sigma = {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            (y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / y.len() as f64).sqrt()
        };

        // Enumeration oracle: across every expression of at most three
        // tokens, exactly one fits exactly, and it is the expected one.
        let mut exact: Vec<String> = Vec::new();
        for tokens in enumerate_trees(&grammar, 3) {
            if best_rmse(&tokens, &grammar, &ds.x, &y) < 1e-9 * sigma {
                let tree = ExpressionTree::new(tokens.clone(), Vec::new());
                exact.push(tree.infix(&grammar));
            }
        }
        let unique = exact.len() == 1 && exact[0] == expect_infix;

        // The policy-gradient search under the default budget.
        let t0 = Instant::now();
        let rep = train(&grammar, &ds.x, &y, &DsrConfig::default(), 6 + state as u64).unwrap();
        let elapsed = t0.elapsed().as_secs_f64();
        let out = evaluate(&rep.best, &ds.x).unwrap();
        let score = r2(&y, &out.values).unwrap();

        ok &= unique && score >= 0.999 && elapsed < 600.0;
        details.push(format!(
            "{name}: unique ≤3-token optimum {} (oracle {}), search r2 {score:.6} \
             after {} candidates in {elapsed:.1} s",
            exact.first().map_or("<none>", |s| s.as_str()),
            if unique { "confirmed" } else { "VIOLATED" },
            rep.candidates,
        ));
    }

    verdict(6, "dsr sanity targets", ok, &details.join("; "));
}

// ---------------------------------------------------------------------------
// Criterion 7 — the analytic risk-seeking gradient matches central finite
// differences on a frozen batch. The objective value used for differencing
// is rebuilt from log-probabilities alone; per-step distributions for the
// entropy term are reconstructed via log-probability differences, so the
// check shares no gradient code with the library.

fn box_muller(rng: &mut ChaCha20Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Σ_slots H(step distribution) along `tokens`, from log-probs only.
fn entropy_via_log_probs(policy: &Policy, grammar: &Grammar, tokens: &[Token]) -> f64 {
    let mut total = 0.0;
    for t in 0..tokens.len() {
        let prefix = &tokens[..t];
        let base = policy.log_prob(grammar, prefix);
        for k in 0..grammar.n_tokens() {
            let mut probe: Vec<Token> = prefix.to_vec();
            probe.push(grammar.token(k));
            let lp = policy.log_prob(grammar, &probe) - base;
            let prob = lp.exp();
            if prob > 0.0 {
                total -= prob * lp;
            }
        }
    }
    total
}

#[test]
fn criterion_7_policy_gradient_check() {
    let t0 = Instant::now();
    let grammar = Grammar::new(vec!["x0".into(), "x1".into()], 8).unwrap();
    let mut policy = Policy::new(&grammar);
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    // Break the zero-init symmetry so every weight matters.
    for i in 0..policy.n_params() {
        *policy.param_mut(i) = 0.4 * box_muller(&mut rng);
    }

    // Frozen batch with risk-seeking weights: top quarter by reward keeps
    // (reward − quantile), everyone else contributes nothing.
    let batch: Vec<Vec<Token>> = (0..8).map(|_| policy.sample(&grammar, &mut rng)).collect();
    let rewards: Vec<f64> = (0..8).map(|i| 0.25 + 0.09 * i as f64).collect();
    let mut order: Vec<usize> = (0..8).collect();
    order.sort_by(|&a, &b| rewards[b].total_cmp(&rewards[a]));
    let kept = &order[..2];
    let r_eps = rewards[kept[1]];
    let mut weights = vec![0.0; 8];
    for &i in kept {
        weights[i] = rewards[i] - r_eps;
    }
    let w_entropy = 0.01;

    let objective = |policy: &Policy| -> f64 {
        batch
            .iter()
            .zip(&weights)
            .map(|(tokens, w)| {
                w * policy.log_prob(&grammar, tokens)
                    + w_entropy * entropy_via_log_probs(policy, &grammar, tokens)
            })
            .sum()
    };

    let mut grad = policy.zero_grad();
    for (tokens, w) in batch.iter().zip(&weights) {
        policy.accumulate_log_prob_grad(&grammar, tokens, *w, &mut grad);
        policy.accumulate_entropy_grad(&grammar, tokens, w_entropy, &mut grad);
    }

    // Central differences on a spread of coordinates across all four
    // parameter blocks.
    let n = policy.n_params();
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let gscale = (0..n)
        .map(|i| Policy::grad_at(&grad, i).abs())
        .fold(0.0, f64::max);
    for i in (0..n).step_by(23) {
        let orig = policy.param(i);
        *policy.param_mut(i) = orig + h;
        let plus = objective(&policy);
        *policy.param_mut(i) = orig - h;
        let minus = objective(&policy);
        *policy.param_mut(i) = orig;
        let fd = (plus - minus) / (2.0 * h);
        let an = Policy::grad_at(&grad, i);
        let rel = (fd - an).abs() / an.abs().max(1e-6 * gscale);
        max_rel = max_rel.max(rel);
    }

    let elapsed = t0.elapsed().as_secs_f64();
    let checked = (0..n).step_by(23).count();
    let ok = max_rel < 1e-4;
    verdict(
        7,
        "policy gradient vs finite differences",
        ok,
        &format!("max relative deviation {max_rel:.2e} over {checked} of {n} coordinates, {elapsed:.2} s"),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 — the library-misspecification findings: a polynomial-only
// sparse fit must score below the trig-capable symbolic search on the four
// rotation-coupled targets, and the symbolic search must cost more wall
// clock, with the ratio reported.

#[test]
fn criterion_8_misspecification_findings() {
    let cfg = PipelineConfig::load(&repo_config("misspec-poly.toml")).unwrap();
    let x0 = find_equilibrium(&cfg.model, &cfg.schedule.initial, None).unwrap();
    let traj = integrate(&cfg.model, &x0, &cfg.schedule, cfg.sim.dt, cfg.sim.t_end).unwrap();
    let ds = build_dataset(&traj, DerivativeMode::Exact, cfg.dataset.stride).unwrap();

    let targets = [idx::I_CV_R, idx::I_CV_I, idx::GAMMA_D, idx::GAMMA_Q];
    let columns: Vec<Vec<f64>> = targets
        .iter()
        .map(|&i| ds.dxdt.iter().map(|row| row[i]).collect())
        .collect();
    let names: Vec<String> = targets
        .iter()
        .map(|&i| format!("d_{}", gflid_core::model::STATE_NAMES[i]))
        .collect();

    // Polynomial-only sparse regression on exactly these targets.
    let t0 = Instant::now();
    let theta = build(&cfg.library, &ds).unwrap();
    let model = stlsq(&theta, &columns, &names, cfg.sindy.threshold, cfg.sindy.ridge).unwrap();
    let sindy_s = t0.elapsed().as_secs_f64();
    let sindy_preds = predict(&model, &theta).unwrap();

    // Trig-capable symbolic search on the same targets.
    let grammar = Grammar::new(ds.column_names.clone(), cfg.dsr.max_length).unwrap();
    let t0 = Instant::now();
    let dsr_r2: Vec<f64> = targets
        .iter()
        .map(|&state| {
            let y: Vec<f64> = ds.dxdt.iter().map(|row| row[state]).collect();
            let rep = search(&grammar, &ds.x, &y, &cfg.dsr, cfg.dsr.seed + state as u64).unwrap();
            let out = evaluate(&rep.best, &ds.x).unwrap();
            r2(&y, &out.values).unwrap()
        })
        .collect();
    let dsr_s = t0.elapsed().as_secs_f64();

    let mut ok = true;
    let mut details = Vec::new();
    for ((name, y), (yhat, dsr)) in names
        .iter()
        .zip(&columns)
        .zip(sindy_preds.iter().zip(&dsr_r2))
    {
        let sindy = r2(y, yhat).unwrap();
        let better = sindy < *dsr;
        ok &= better;
        details.push(format!(
            "{name}: sindy {sindy:.4} {} dsr {dsr:.4}",
            if better { "<" } else { "≥" }
        ));
    }
    let slower = dsr_s > sindy_s;
    ok &= slower;
    details.push(format!(
        "wall clock: dsr {dsr_s:.1} s vs sindy {sindy_s:.2} s, ratio {:.1}",
        dsr_s / sindy_s
    ));

    verdict(8, "misspecification findings", ok, &details.join("; "));
}

// ---------------------------------------------------------------------------
// Criterion 9 — end-to-end determinism of the shipped binary.

#[test]
fn criterion_9_determinism() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = repo_config("quick.toml");

    let run = |out: &Path| {
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_gflid"))
            .args(["full", "--config"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .status()
            .unwrap();
        assert!(status.success(), "gflid full failed in {}", out.display());
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a);
    run(&b);

    let mut same = true;
    let mut checked = Vec::new();
    for f in ["model_sindy.json", "model_dsr.json", "report.json", "dataset.csv"] {
        let left = std::fs::read(a.join(f)).unwrap();
        let right = std::fs::read(b.join(f)).unwrap();
        same &= left == right;
        checked.push(format!("{f} ({} bytes)", left.len()));
    }

    let elapsed = t0.elapsed().as_secs_f64();
    verdict(
        9,
        "end-to-end determinism",
        same,
        &format!("byte-identical across runs: {}, {elapsed:.1} s", checked.join(", ")),
    );
}
