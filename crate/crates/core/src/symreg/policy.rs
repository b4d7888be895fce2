//! Autoregressive token policy: a small two-layer network conditioned on
//! (parent, sibling, depth) of the slot being filled, with exact
//! hand-derived gradients for the risk-seeking update and the entropy
//! bonus.
//!
//! Gradients are computed by replaying a finished token sequence through
//! the same generation state machine used for sampling, so nothing but the
//! tokens needs to be stored per candidate.

use rand::Rng;

use crate::error::{Error, Result};

use super::grammar::{GenState, Grammar, SlotContext, Token};

/// Hidden layer width.
pub const HIDDEN: usize = 32;
/// Depth one-hot buckets; deeper slots share the last bucket.
pub const DEPTH_BUCKETS: usize = 8;

/// Parameter gradient with the same shapes as the policy.
#[derive(Debug, Clone)]
pub struct Gradient {
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Gradient {
    fn zeros(policy: &Policy) -> Self {
        Self {
            w1: vec![0.0; policy.w1.len()],
            b1: vec![0.0; policy.b1.len()],
            w2: vec![0.0; policy.w2.len()],
            b2: vec![0.0; policy.b2.len()],
        }
    }
}

/// The sampling distribution: logits(context) over the token vocabulary.
#[derive(Debug, Clone)]
pub struct Policy {
    n_tokens: usize,
    /// (2(n_tokens+1) + DEPTH_BUCKETS) × HIDDEN, row-major by input.
    w1: Vec<f64>,
    b1: Vec<f64>,
    /// HIDDEN × n_tokens, row-major by hidden unit.
    w2: Vec<f64>,
    b2: Vec<f64>,
}

/// One slot's distribution, kept for gradient work.
struct StepForward {
    features: [usize; 3],
    hidden: [f64; HIDDEN],
    /// Masked probabilities (zero where masked).
    probs: Vec<f64>,
}

impl Policy {
    /// Zero-initialized policy: uniform over unmasked tokens everywhere.
    pub fn new(grammar: &Grammar) -> Self {
        let n_tokens = grammar.n_tokens();
        let in_dim = 2 * (n_tokens + 1) + DEPTH_BUCKETS;
        Self {
            n_tokens,
            w1: vec![0.0; in_dim * HIDDEN],
            b1: vec![0.0; HIDDEN],
            w2: vec![0.0; HIDDEN * n_tokens],
            b2: vec![0.0; n_tokens],
        }
    }

    /// Active input indices for a slot context (one per one-hot block).
    fn features(&self, grammar: &Grammar, ctx: &SlotContext) -> [usize; 3] {
        let parent = match ctx.parent {
            None => 0,
            Some(t) => 1 + grammar.index(t),
        };
        let sibling_base = self.n_tokens + 1;
        let sibling = sibling_base
            + match ctx.sibling {
                None => 0,
                Some(t) => 1 + grammar.index(t),
            };
        let depth_base = 2 * (self.n_tokens + 1);
        let depth = depth_base + ctx.depth.min(DEPTH_BUCKETS - 1);
        [parent, sibling, depth]
    }

    /// Forward pass for one slot: masked probabilities and the hidden
    /// activations needed to push gradients back.
    fn forward(&self, grammar: &Grammar, ctx: &SlotContext, mask: &[bool]) -> StepForward {
        let features = self.features(grammar, ctx);
        let mut hidden = [0.0; HIDDEN];
        for h in 0..HIDDEN {
            let mut pre = self.b1[h];
            for f in features {
                pre += self.w1[f * HIDDEN + h];
            }
            hidden[h] = pre.tanh();
        }
        let mut logits = self.b2.clone();
        for (h, &hv) in hidden.iter().enumerate() {
            if hv != 0.0 {
                let row = &self.w2[h * self.n_tokens..(h + 1) * self.n_tokens];
                for (l, w) in logits.iter_mut().zip(row) {
                    *l += hv * w;
                }
            }
        }
        let max = logits
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(l, _)| *l)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut probs = vec![0.0; self.n_tokens];
        let mut z = 0.0;
        for k in 0..self.n_tokens {
            if mask[k] {
                let e = (logits[k] - max).exp();
                probs[k] = e;
                z += e;
            }
        }
        for p in &mut probs {
            *p /= z;
        }
        StepForward {
            features,
            hidden,
            probs,
        }
    }

    /// Sample one complete tree; deterministic for a given rng state.
    pub fn sample(&self, grammar: &Grammar, rng: &mut impl Rng) -> Vec<Token> {
        let mut state = GenState::new();
        while !state.complete() {
            let mask = state.mask(grammar);
            let step = self.forward(grammar, &state.context(), &mask);
            let draw: f64 = rng.gen();
            let mut acc = 0.0;
            let mut chosen = self
                .n_tokens
                .checked_sub(1)
                .expect("vocabulary is non-empty");
            for (k, p) in step.probs.iter().enumerate() {
                acc += p;
                if draw < acc {
                    chosen = k;
                    break;
                }
            }
            // Guard against accumulated rounding putting the draw past the
            // final bucket: fall back to the last unmasked token.
            if !mask[chosen] {
                chosen = mask.iter().rposition(|m| *m).expect("mask never empties");
            }
            state.push(grammar.token(chosen));
        }
        state.tokens
    }

    /// Exact log-probability of a complete token sequence.
    pub fn log_prob(&self, grammar: &Grammar, tokens: &[Token]) -> f64 {
        let mut state = GenState::new();
        let mut lp = 0.0;
        for tok in tokens {
            let mask = state.mask(grammar);
            let step = self.forward(grammar, &state.context(), &mask);
            lp += step.probs[grammar.index(*tok)].ln();
            state.push(*tok);
        }
        lp
    }

    /// Shared backward pass: fold d(objective)/d(logits) for one slot into
    /// the gradient accumulator.
    fn backprop_step(&self, step: &StepForward, dlogits: &[f64], grad: &mut Gradient) {
        let mut dh = [0.0; HIDDEN];
        for h in 0..HIDDEN {
            let row = &self.w2[h * self.n_tokens..(h + 1) * self.n_tokens];
            let mut acc = 0.0;
            for (w, d) in row.iter().zip(dlogits) {
                acc += w * d;
            }
            dh[h] = acc;
            let grow = &mut grad.w2[h * self.n_tokens..(h + 1) * self.n_tokens];
            let hv = step.hidden[h];
            for (g, d) in grow.iter_mut().zip(dlogits) {
                *g += hv * d;
            }
        }
        for (g, d) in grad.b2.iter_mut().zip(dlogits) {
            *g += d;
        }
        for h in 0..HIDDEN {
            let dpre = (1.0 - step.hidden[h] * step.hidden[h]) * dh[h];
            grad.b1[h] += dpre;
            for f in step.features {
                grad.w1[f * HIDDEN + h] += dpre;
            }
        }
    }

    /// Accumulate `weight · ∇ log p(tokens)` into `grad`.
    pub fn accumulate_log_prob_grad(
        &self,
        grammar: &Grammar,
        tokens: &[Token],
        weight: f64,
        grad: &mut Gradient,
    ) {
        let mut state = GenState::new();
        let mut dlogits = vec![0.0; self.n_tokens];
        for tok in tokens {
            let mask = state.mask(grammar);
            let step = self.forward(grammar, &state.context(), &mask);
            let chosen = grammar.index(*tok);
            for k in 0..self.n_tokens {
                dlogits[k] = if mask[k] {
                    weight * (f64::from(u8::from(k == chosen)) - step.probs[k])
                } else {
                    0.0
                };
            }
            self.backprop_step(&step, &dlogits, grad);
            state.push(*tok);
        }
    }

    /// Accumulate `weight · ∇ Σ_steps H(step distribution)` along the
    /// slots visited by `tokens`.
    pub fn accumulate_entropy_grad(
        &self,
        grammar: &Grammar,
        tokens: &[Token],
        weight: f64,
        grad: &mut Gradient,
    ) {
        let mut state = GenState::new();
        let mut dlogits = vec![0.0; self.n_tokens];
        for tok in tokens {
            let mask = state.mask(grammar);
            let step = self.forward(grammar, &state.context(), &mask);
            let entropy: f64 = step
                .probs
                .iter()
                .filter(|p| **p > 0.0)
                .map(|p| -p * p.ln())
                .sum();
            for k in 0..self.n_tokens {
                dlogits[k] = if mask[k] && step.probs[k] > 0.0 {
                    -weight * step.probs[k] * (step.probs[k].ln() + entropy)
                } else {
                    0.0
                };
            }
            self.backprop_step(&step, &dlogits, grad);
            state.push(*tok);
        }
    }

    /// Gradient-ascent step.
    pub fn apply(&mut self, grad: &Gradient, lr: f64) {
        for (w, g) in self.w1.iter_mut().zip(&grad.w1) {
            *w += lr * g;
        }
        for (w, g) in self.b1.iter_mut().zip(&grad.b1) {
            *w += lr * g;
        }
        for (w, g) in self.w2.iter_mut().zip(&grad.w2) {
            *w += lr * g;
        }
        for (w, g) in self.b2.iter_mut().zip(&grad.b2) {
            *w += lr * g;
        }
    }

    pub fn zero_grad(&self) -> Gradient {
        Gradient::zeros(self)
    }

    /// Error if any parameter has left the finite range.
    pub fn check_finite(&self, iteration: usize) -> Result<()> {
        let finite = self.w1.iter().chain(&self.b1).chain(&self.w2).chain(&self.b2);
        for v in finite {
            if !v.is_finite() {
                return Err(Error::Numerics(format!(
                    "policy diverged (non-finite parameters) at iteration {iteration}"
                )));
            }
        }
        Ok(())
    }

    /// Total parameter count (for diagnostics and gradient checks).
    pub fn n_params(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    /// Flat read/write access for finite-difference tests.
    pub fn param(&self, i: usize) -> f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < a {
            self.w1[i]
        } else if i < a + b {
            self.b1[i - a]
        } else if i < a + b + c {
            self.w2[i - a - b]
        } else {
            self.b2[i - a - b - c]
        }
    }

    pub fn param_mut(&mut self, i: usize) -> &mut f64 {
        let (a, b, c) = (self.w1.len(), self.b1.len(), self.w2.len());
        if i < a {
            &mut self.w1[i]
        } else if i < a + b {
            &mut self.b1[i - a]
        } else if i < a + b + c {
            &mut self.w2[i - a - b]
        } else {
            &mut self.b2[i - a - b - c]
        }
    }

    /// Gradient component at the same flat index.
    pub fn grad_at(grad: &Gradient, i: usize) -> f64 {
        let (a, b, c) = (grad.w1.len(), grad.b1.len(), grad.w2.len());
        if i < a {
            grad.w1[i]
        } else if i < a + b {
            grad.b1[i - a]
        } else if i < a + b + c {
            grad.w2[i - a - b]
        } else {
            grad.b2[i - a - b - c]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn grammar() -> Grammar {
        Grammar::new(vec!["x0".to_string(), "x1".to_string()], 9).unwrap()
    }

    /// Give the policy non-trivial weights so tests exercise the full
    /// network, deterministically.
    fn perturbed_policy(grammar: &Grammar) -> Policy {
        let mut p = Policy::new(grammar);
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        for i in 0..p.n_params() {
            *p.param_mut(i) = 0.2 * rng.gen_range(-1.0..1.0);
        }
        p
    }

    #[test]
    fn probabilities_normalize_after_masking() {
        let g = grammar();
        let p = perturbed_policy(&g);
        let mut state = GenState::new();
        state.push(Token::Sin);
        let mask = state.mask(&g);
        let step = p.forward(&g, &state.context(), &mask);
        let sum: f64 = step.probs.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "{sum}");
        assert_eq!(step.probs[g.index(Token::Sin)], 0.0, "masked token kept mass");
    }

    #[test]
    fn samples_are_valid_trees_and_deterministic() {
        let g = grammar();
        let p = perturbed_policy(&g);
        let mut rng1 = ChaCha20Rng::seed_from_u64(5);
        let mut rng2 = ChaCha20Rng::seed_from_u64(5);
        for _ in 0..200 {
            let t1 = p.sample(&g, &mut rng1);
            let t2 = p.sample(&g, &mut rng2);
            assert_eq!(t1, t2);
            // Independent arity bookkeeping.
            let mut open = 1i64;
            for tok in &t1 {
                assert!(open > 0);
                open += tok.arity() as i64 - 1;
            }
            assert_eq!(open, 0);
            assert!(t1.len() >= g.min_length && t1.len() <= g.max_length);
        }
    }

    #[test]
    fn uniform_root_frequencies_within_three_sigma() {
        // Zero-initialized policy at the root: terminals are masked by the
        // length floor, leaving six operators at 1/6 each.
        let g = grammar();
        let p = Policy::new(&g);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let n = 100_000;
        let mut counts = vec![0usize; g.n_tokens()];
        for _ in 0..n {
            let t = p.sample(&g, &mut rng);
            counts[g.index(t[0])] += 1;
        }
        let expected = n as f64 / 6.0;
        let sigma = (n as f64 * (1.0 / 6.0) * (5.0 / 6.0)).sqrt();
        for k in 0..6 {
            let dev = (counts[k] as f64 - expected).abs();
            assert!(dev < 3.0 * sigma, "token {k}: {} vs {expected} ± {sigma}", counts[k]);
        }
        for k in 6..g.n_tokens() {
            assert_eq!(counts[k], 0, "terminal at root");
        }
    }

    #[test]
    fn log_prob_matches_uniform_counting() {
        // Zero policy: each step is uniform over its unmasked set, so the
        // sequence log-probability is −Σ ln(choices).
        let g = grammar();
        let p = Policy::new(&g);
        let tokens = vec![Token::Add, Token::Var(0), Token::Var(1)];
        // Step 1: root, 6 operator choices. Step 2: inside +, length
        // budget 9 allows everything: 9 choices. Step 3: final slot at
        // placed=2 completes at length 3 = floor: all 9 allowed.
        let expect = -(6.0f64.ln() + 9.0f64.ln() + 9.0f64.ln());
        let lp = p.log_prob(&g, &tokens);
        assert!((lp - expect).abs() < 1e-12, "{lp} vs {expect}");
    }

    #[test]
    fn risk_gradient_matches_finite_differences() {
        // J(θ) = Σ_i w_i · log p_θ(tree_i): analytic gradient vs central
        // differences across every parameter.
        let g = grammar();
        let mut p = perturbed_policy(&g);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let trees: Vec<Vec<Token>> = (0..5).map(|_| p.sample(&g, &mut rng)).collect();
        let weights = [0.7, -0.3, 0.1, 0.05, -1.2];

        let mut grad = p.zero_grad();
        for (tree, w) in trees.iter().zip(weights) {
            p.accumulate_log_prob_grad(&g, tree, w, &mut grad);
        }

        let objective = |p: &Policy| -> f64 {
            trees
                .iter()
                .zip(weights)
                .map(|(t, w)| w * p.log_prob(&g, t))
                .sum()
        };
        let h = 1e-5;
        let n = p.n_params();
        let mut worst = 0.0f64;
        for i in 0..n {
            let orig = p.param(i);
            *p.param_mut(i) = orig + h;
            let up = objective(&p);
            *p.param_mut(i) = orig - h;
            let dn = objective(&p);
            *p.param_mut(i) = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = Policy::grad_at(&grad, i);
            let denom = an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((fd - an).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative gradient mismatch {worst:.3e}");
    }

    #[test]
    fn entropy_gradient_matches_finite_differences() {
        let g = grammar();
        let mut p = perturbed_policy(&g);
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        let tree = p.sample(&g, &mut rng);

        let mut grad = p.zero_grad();
        p.accumulate_entropy_grad(&g, &tree, 1.0, &mut grad);

        let entropy_sum = |p: &Policy| -> f64 {
            let mut state = GenState::new();
            let mut total = 0.0;
            for tok in &tree {
                let mask = state.mask(&g);
                let step = p.forward(&g, &state.context(), &mask);
                total += step
                    .probs
                    .iter()
                    .filter(|q| **q > 0.0)
                    .map(|q| -q * q.ln())
                    .sum::<f64>();
                state.push(*tok);
            }
            total
        };
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..p.n_params() {
            let orig = p.param(i);
            *p.param_mut(i) = orig + h;
            let up = entropy_sum(&p);
            *p.param_mut(i) = orig - h;
            let dn = entropy_sum(&p);
            *p.param_mut(i) = orig;
            let fd = (up - dn) / (2.0 * h);
            let an = Policy::grad_at(&grad, i);
            let denom = an.abs().max(fd.abs()).max(1e-8);
            worst = worst.max((fd - an).abs() / denom);
        }
        assert!(worst < 1e-4, "worst relative entropy-gradient mismatch {worst:.3e}");
    }

    #[test]
    fn divergence_detected() {
        let g = grammar();
        let mut p = Policy::new(&g);
        p.check_finite(3).unwrap();
        *p.param_mut(0) = f64::NAN;
        let err = p.check_finite(3).unwrap_err();
        assert!(err.to_string().contains("iteration 3"), "{err}");
    }
}
