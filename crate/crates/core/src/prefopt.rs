//! Preference losses and objectives.
//!
//! Pure functions over rewards and policy log-probabilities:
//!
//! ```text
//! p(y_w > y_l | x)  = σ(r(x,y_w) − r(x,y_l))                      Bradley-Terry
//! L(r)              = −E[log σ(r(x,y_w) − r(x,y_l))]               reward model
//! J(π)              = E[r(x,y)] − β·KL(π(y|x) || π_ref(y|x))       KL-regularised RLHF
//! L_prefer(π)       = −E[log σ(β·log π(y_w|x) − β·log π(y_l|x))]   uniform reference
//! L_NLL(π)          = −E[log π(y_w|x)]
//! L_CPO             = L_prefer + w·L_NLL
//! ```
//!
//! Expectations are arithmetic means over the batch. `−log σ(z)` is always
//! evaluated as `softplus(−z)`.

use thiserror::Error;

/// Errors raised by the loss functions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum PrefOptError {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),
    #[error("empty batch")]
    EmptyBatch,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("log-probability {0} is positive")]
    PositiveLogProb(f64),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("not a probability distribution: {0}")]
    NotADistribution(String),
    #[error("infinite divergence: p > 0 where q = 0 at index {index}")]
    InfiniteDivergence { index: usize },
    #[error("infinite divergence at sample {sample}, position {position} (symbol index {index})")]
    InfiniteDivergenceAt {
        sample: usize,
        position: usize,
        index: usize,
    },
    #[error("model error: {0}")]
    Model(String),
}

pub type Result<T> = std::result::Result<T, PrefOptError>;

/// Rewards of the preferred and dis-preferred output for one prompt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardPair {
    pub r_w: f64,
    pub r_l: f64,
}

impl RewardPair {
    pub fn new(r_w: f64, r_l: f64) -> Result<Self> {
        if !r_w.is_finite() || !r_l.is_finite() {
            return Err(PrefOptError::NonFinite("reward"));
        }
        Ok(Self { r_w, r_l })
    }

    pub fn margin(&self) -> f64 {
        self.r_w - self.r_l
    }
}

/// Sequence log-probabilities of the preferred and dis-preferred output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogProbPair {
    pub lp_w: f64,
    pub lp_l: f64,
}

impl LogProbPair {
    pub fn new(lp_w: f64, lp_l: f64) -> Result<Self> {
        let pair = Self { lp_w, lp_l };
        pair.validate()?;
        Ok(pair)
    }

    pub fn validate(&self) -> Result<()> {
        for lp in [self.lp_w, self.lp_l] {
            if !lp.is_finite() {
                return Err(PrefOptError::NonFinite("log-probability"));
            }
            if lp > 0.0 {
                return Err(PrefOptError::PositiveLogProb(lp));
            }
        }
        Ok(())
    }

    /// `lp_w − lp_l`.
    pub fn margin(&self) -> f64 {
        self.lp_w - self.lp_l
    }
}

/// Temperature and NLL weight of the CPO objective.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpoHyperparams {
    pub beta: f64,
    pub nll_weight: f64,
}

impl Default for CpoHyperparams {
    fn default() -> Self {
        Self {
            beta: 0.1,
            nll_weight: 1.0,
        }
    }
}

impl CpoHyperparams {
    pub fn new(beta: f64, nll_weight: f64) -> Result<Self> {
        let hp = Self { beta, nll_weight };
        hp.validate()?;
        Ok(hp)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(PrefOptError::InvalidHyperparameter(format!(
                "beta must be finite and > 0, got {}",
                self.beta
            )));
        }
        if !(self.nll_weight.is_finite() && self.nll_weight >= 0.0) {
            return Err(PrefOptError::InvalidHyperparameter(format!(
                "nll_weight must be finite and >= 0, got {}",
                self.nll_weight
            )));
        }
        Ok(())
    }
}

/// A loss value, optionally with its gradient over the policy parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub gradient: Option<Vec<f64>>,
}

impl LossValue {
    fn scalar(value: f64) -> Self {
        Self { value, gradient: None }
    }
}

/// Gradient of a scalar with respect to a flat parameter vector, stored as
/// sorted `(index, value)` entries; absent indices are exactly zero.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGradient {
    pub dim: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseGradient {
    pub fn get(&self, index: usize) -> f64 {
        match self.entries.binary_search_by_key(&index, |&(i, _)| i) {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    /// `dense += scale · self`
    pub fn add_scaled_to(&self, dense: &mut [f64], scale: f64) {
        for &(i, g) in &self.entries {
            dense[i] += scale * g;
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut dense = vec![0.0; self.dim];
        self.add_scaled_to(&mut dense, 1.0);
        dense
    }
}

/// One training pair: its log-probabilities and their parameter gradients.
#[derive(Debug, Clone, Copy)]
pub struct DifferentiablePair<'a> {
    pub logprobs: LogProbPair,
    pub grad_w: &'a SparseGradient,
    pub grad_l: &'a SparseGradient,
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic function `1 / (1 + e^−z)`.
pub fn logistic(z: f64) -> Result<f64> {
    if !z.is_finite() {
        return Err(PrefOptError::NonFinite("logistic argument"));
    }
    Ok(sigmoid(z))
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Bradley-Terry probability that the preferred output wins.
pub fn bt_preference_prob(rewards: RewardPair) -> Result<f64> {
    logistic(rewards.margin())
}

/// Mean negative log-likelihood of the preference data under the reward
/// model.
pub fn reward_model_loss(pairs: &[RewardPair]) -> Result<LossValue> {
    if pairs.is_empty() {
        return Err(PrefOptError::EmptyBatch);
    }
    let mut total = 0.0;
    for p in pairs {
        if !p.r_w.is_finite() || !p.r_l.is_finite() {
            return Err(PrefOptError::NonFinite("reward"));
        }
        total += softplus(-p.margin());
    }
    Ok(LossValue::scalar(total / pairs.len() as f64))
}

/// Monte-Carlo estimate of the KL-regularised RLHF objective over samples
/// `y ~ π(·|x)`: `mean(r) − β·mean(log π − log π_ref)`. Higher is better.
pub fn rlhf_objective(policy_logprobs: &[f64], ref_logprobs: &[f64], rewards: &[f64], beta: f64) -> Result<f64> {
    let n = policy_logprobs.len();
    if n == 0 {
        return Err(PrefOptError::EmptyBatch);
    }
    if ref_logprobs.len() != n || rewards.len() != n {
        return Err(PrefOptError::LengthMismatch(format!(
            "policy {} / reference {} / rewards {}",
            n,
            ref_logprobs.len(),
            rewards.len()
        )));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(PrefOptError::InvalidHyperparameter(format!(
            "beta must be finite and >= 0, got {beta}"
        )));
    }
    let mut reward_sum = 0.0;
    let mut kl_sum = 0.0;
    for i in 0..n {
        let (p, q, r) = (policy_logprobs[i], ref_logprobs[i], rewards[i]);
        if !(p.is_finite() && q.is_finite() && r.is_finite()) {
            return Err(PrefOptError::NonFinite("rlhf sample"));
        }
        reward_sum += r;
        kl_sum += p - q;
    }
    let n = n as f64;
    if beta == 0.0 {
        return Ok(reward_sum / n);
    }
    Ok(reward_sum / n - beta * (kl_sum / n))
}

/// `−log σ(β·(lp_w − lp_l))`.
pub fn cpo_prefer_loss(logprobs: LogProbPair, hp: CpoHyperparams) -> Result<LossValue> {
    logprobs.validate()?;
    hp.validate()?;
    Ok(LossValue::scalar(softplus(-hp.beta * logprobs.margin())))
}

/// `−lp_w`.
pub fn nll_loss(lp_w: f64) -> Result<LossValue> {
    if !lp_w.is_finite() {
        return Err(PrefOptError::NonFinite("log-probability"));
    }
    if lp_w > 0.0 {
        return Err(PrefOptError::PositiveLogProb(lp_w));
    }
    Ok(LossValue::scalar(-lp_w))
}

fn example_loss(lp: LogProbPair, hp: CpoHyperparams) -> f64 {
    softplus(-hp.beta * lp.margin()) - hp.nll_weight * lp.lp_w
}

/// Partial derivatives of one example's CPO loss with respect to
/// `(lp_w, lp_l)`.
pub fn cpo_example_weights(lp: LogProbPair, hp: CpoHyperparams) -> (f64, f64) {
    // d/dm softplus(−βm) = −β σ(−βm)
    let s = hp.beta * sigmoid(-hp.beta * lp.margin());
    (-s - hp.nll_weight, s)
}

/// Batch-mean CPO loss `L_prefer + nll_weight · L_NLL`.
pub fn cpo_loss(batch: &[LogProbPair], hp: CpoHyperparams) -> Result<LossValue> {
    if batch.is_empty() {
        return Err(PrefOptError::EmptyBatch);
    }
    hp.validate()?;
    let mut total = 0.0;
    for lp in batch {
        lp.validate()?;
        total += example_loss(*lp, hp);
    }
    Ok(LossValue::scalar(total / batch.len() as f64))
}

/// Batch-mean CPO loss with its dense gradient, chained through each pair's
/// log-probability gradients.
pub fn cpo_loss_with_gradient(batch: &[DifferentiablePair<'_>], hp: CpoHyperparams) -> Result<LossValue> {
    let Some(first) = batch.first() else {
        return Err(PrefOptError::EmptyBatch);
    };
    hp.validate()?;
    let dim = first.grad_w.dim;
    let inv_n = 1.0 / batch.len() as f64;
    let mut gradient = vec![0.0; dim];
    let mut total = 0.0;
    for pair in batch {
        pair.logprobs.validate()?;
        if pair.grad_w.dim != dim || pair.grad_l.dim != dim {
            return Err(PrefOptError::LengthMismatch(format!(
                "gradient dimensions {} / {} differ from {}",
                pair.grad_w.dim, pair.grad_l.dim, dim
            )));
        }
        total += example_loss(pair.logprobs, hp);
        let (dw, dl) = cpo_example_weights(pair.logprobs, hp);
        pair.grad_w.add_scaled_to(&mut gradient, dw * inv_n);
        pair.grad_l.add_scaled_to(&mut gradient, dl * inv_n);
    }
    Ok(LossValue {
        value: total * inv_n,
        gradient: Some(gradient),
    })
}

fn check_distribution(v: &[f64], name: &str) -> Result<()> {
    let mut sum = 0.0;
    for &x in v {
        if !x.is_finite() || x < 0.0 {
            return Err(PrefOptError::NotADistribution(format!("{name} has entry {x}")));
        }
        sum += x;
    }
    if (sum - 1.0).abs() > 1e-9 {
        return Err(PrefOptError::NotADistribution(format!("{name} sums to {sum}")));
    }
    Ok(())
}

/// `KL(p || q) = Σ p·ln(p/q)` over one next-token distribution pair.
pub fn kl_next_token(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(PrefOptError::LengthMismatch(format!(
            "p has {} entries, q has {}",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p, "p")?;
    check_distribution(q, "q")?;
    let mut kl = 0.0;
    for (index, (&pi, &qi)) in p.iter().zip(q).enumerate() {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(PrefOptError::InfiniteDivergence { index });
        }
        kl += pi * (pi / qi).ln();
    }
    Ok(kl.max(0.0))
}

/// A model that can report its next-token distribution at every
/// teacher-forced position of `y` given prompt `x`.
pub trait NextTokenModel {
    fn teacher_forced_distributions(
        &self,
        x: &str,
        y: &str,
    ) -> std::result::Result<Vec<Vec<f64>>, Box<dyn std::error::Error + Send + Sync>>;
}

/// Mean KL from the behaviour-cloned policy to the trained policy over all
/// teacher-forced positions of the preferred outputs.
pub fn bc_divergence<P, Q>(preferred_fit: &P, trained: &Q, prompts_and_preferred: &[(String, String)]) -> Result<f64>
where
    P: NextTokenModel + ?Sized,
    Q: NextTokenModel + ?Sized,
{
    if prompts_and_preferred.is_empty() {
        return Err(PrefOptError::EmptyBatch);
    }
    let mut total = 0.0;
    let mut positions = 0usize;
    for (sample, (x, y)) in prompts_and_preferred.iter().enumerate() {
        let p_rows = preferred_fit
            .teacher_forced_distributions(x, y)
            .map_err(|e| PrefOptError::Model(e.to_string()))?;
        let q_rows = trained
            .teacher_forced_distributions(x, y)
            .map_err(|e| PrefOptError::Model(e.to_string()))?;
        if p_rows.len() != q_rows.len() {
            return Err(PrefOptError::LengthMismatch(format!(
                "sample {sample}: {} vs {} positions",
                p_rows.len(),
                q_rows.len()
            )));
        }
        for (position, (p, q)) in p_rows.iter().zip(&q_rows).enumerate() {
            total += kl_next_token(p, q).map_err(|e| match e {
                PrefOptError::InfiniteDivergence { index } => PrefOptError::InfiniteDivergenceAt {
                    sample,
                    position,
                    index,
                },
                other => other,
            })?;
            positions += 1;
        }
    }
    Ok(total / positions as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn lp(w: f64, l: f64) -> LogProbPair {
        LogProbPair::new(w, l).unwrap()
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(0.0).unwrap(), 0.5);
        let expected = 1.0 / (1.0 + (-1.0f64).exp());
        assert!((logistic(1.0).unwrap() - expected).abs() < 1e-15);
        assert!((logistic(1.0).unwrap() - 0.731_058_578_630_005).abs() < 1e-12);
        assert!(logistic(f64::NAN).is_err());
        assert!(logistic(f64::INFINITY).is_err());
        assert!(logistic(700.0).unwrap() <= 1.0);
        assert!(logistic(-700.0).unwrap() > 0.0);
    }

    #[test]
    fn bt_examples() {
        assert_eq!(bt_preference_prob(RewardPair::new(0.0, 0.0).unwrap()).unwrap(), 0.5);
        let p = bt_preference_prob(RewardPair::new(1.0, 0.0).unwrap()).unwrap();
        assert!((p - 0.731_058_578_630_005).abs() < 1e-12);
        let shifted = bt_preference_prob(RewardPair::new(3.5, 2.5).unwrap()).unwrap();
        assert!((p - shifted).abs() < 1e-15);
    }

    #[test]
    fn reward_model_loss_examples() {
        let l = reward_model_loss(&[RewardPair::new(0.0, 0.0).unwrap()]).unwrap();
        assert!((l.value - LN2).abs() < 1e-15);
        let a = reward_model_loss(&[RewardPair::new(2.0, 1.0).unwrap()]).unwrap();
        let b = reward_model_loss(&[RewardPair::new(1.0, 0.0).unwrap()]).unwrap();
        assert_eq!(a.value, b.value);
        // −log σ(10) = ln(1 + e^−10)
        let c = reward_model_loss(&[RewardPair::new(10.0, 0.0).unwrap()]).unwrap();
        assert!((c.value - 4.54e-5).abs() < 1e-6);
        assert!((c.value - (-10.0f64).exp().ln_1p()).abs() < 1e-18);
        assert_eq!(reward_model_loss(&[]), Err(PrefOptError::EmptyBatch));
    }

    #[test]
    fn rlhf_examples() {
        assert_eq!(
            rlhf_objective(&[-1.0, -2.0], &[-1.0, -2.0], &[1.0, 1.0], 0.3).unwrap(),
            1.0
        );
        assert_eq!(
            rlhf_objective(&[-1.0, -1.0], &[-2.0, -2.0], &[0.0, 0.0], 0.5).unwrap(),
            -0.5
        );
        assert_eq!(
            rlhf_objective(&[-1.0, -7.0], &[-2.0, -2.0], &[0.25, 0.5], 0.0).unwrap(),
            0.375
        );
        assert!(matches!(
            rlhf_objective(&[-1.0], &[-1.0, -2.0], &[0.0], 0.1),
            Err(PrefOptError::LengthMismatch(_))
        ));
    }

    #[test]
    fn cpo_prefer_examples() {
        for beta in [0.1, 0.5, 3.0] {
            let hp = CpoHyperparams::new(beta, 1.0).unwrap();
            assert!((cpo_prefer_loss(lp(-4.0, -4.0), hp).unwrap().value - LN2).abs() < 1e-15);
        }
        let hp = CpoHyperparams::default();
        let pos = cpo_prefer_loss(lp(-1.0, -11.0), hp).unwrap().value;
        assert!((pos - 0.313_261_687_518_222_8).abs() < 1e-12);
        let neg = cpo_prefer_loss(lp(-11.0, -1.0), hp).unwrap().value;
        assert!((neg - 1.313_261_687_518_222_8).abs() < 1e-12);
    }

    #[test]
    fn nll_examples() {
        assert_eq!(nll_loss(0.0).unwrap().value, 0.0);
        assert_eq!(nll_loss(-1.5).unwrap().value, 1.5);
        let uniform = -3.0 * 4f64.ln();
        assert!((nll_loss(uniform).unwrap().value - 4.158_883_083_359_672).abs() < 1e-12);
        assert!(matches!(nll_loss(0.1), Err(PrefOptError::PositiveLogProb(_))));
    }

    #[test]
    fn cpo_loss_examples() {
        let uniform = -3.0 * 4f64.ln();
        let batch = vec![lp(uniform, uniform); 5];
        let v = cpo_loss(&batch, CpoHyperparams::default()).unwrap().value;
        assert!((v - 4.852_030_263_919_617).abs() < 1e-12);

        let batch = [lp(-1.0, -3.0), lp(-2.0, -0.5)];
        let off = CpoHyperparams::new(0.3, 0.0).unwrap();
        let mean_prefer = batch
            .iter()
            .map(|p| cpo_prefer_loss(*p, off).unwrap().value)
            .sum::<f64>()
            / 2.0;
        assert!((cpo_loss(&batch, off).unwrap().value - mean_prefer).abs() < 1e-15);
        assert_eq!(cpo_loss(&[], off), Err(PrefOptError::EmptyBatch));
    }

    #[test]
    fn kl_examples() {
        assert_eq!(kl_next_token(&[0.5, 0.5], &[0.5, 0.5]).unwrap(), 0.0);
        let kl = kl_next_token(&[0.9, 0.1], &[0.5, 0.5]).unwrap();
        assert!((kl - (0.9 * 1.8f64.ln() + 0.1 * 0.2f64.ln())).abs() < 1e-15);
        assert!((kl - 0.368_064).abs() < 1e-5);
        assert_eq!(
            kl_next_token(&[1.0, 0.0], &[0.0, 1.0]),
            Err(PrefOptError::InfiniteDivergence { index: 0 })
        );
        assert!(kl_next_token(&[0.7, 0.7], &[0.5, 0.5]).is_err());
    }

    #[test]
    fn gradient_weights_match_finite_differences() {
        let hp = CpoHyperparams::new(0.37, 0.8).unwrap();
        let p = lp(-2.0, -3.5);
        let (dw, dl) = cpo_example_weights(p, hp);
        let h = 1e-6;
        let fd_w = (example_loss(lp(p.lp_w + h, p.lp_l), hp) - example_loss(lp(p.lp_w - h, p.lp_l), hp)) / (2.0 * h);
        let fd_l = (example_loss(lp(p.lp_w, p.lp_l + h), hp) - example_loss(lp(p.lp_w, p.lp_l - h), hp)) / (2.0 * h);
        assert!((dw - fd_w).abs() < 1e-8);
        assert!((dl - fd_l).abs() < 1e-8);
    }

    #[test]
    fn gradient_chains_through_sparse_pairs() {
        let gw = SparseGradient {
            dim: 3,
            entries: vec![(0, 1.0), (2, -0.5)],
        };
        let gl = SparseGradient {
            dim: 3,
            entries: vec![(1, 2.0)],
        };
        let hp = CpoHyperparams::default();
        let pair = DifferentiablePair {
            logprobs: lp(-1.0, -2.0),
            grad_w: &gw,
            grad_l: &gl,
        };
        let out = cpo_loss_with_gradient(&[pair], hp).unwrap();
        let (dw, dl) = cpo_example_weights(pair.logprobs, hp);
        let g = out.gradient.unwrap();
        assert_eq!(g, vec![dw, 2.0 * dl, -0.5 * dw]);
        assert_eq!(out.value, cpo_loss(&[pair.logprobs], hp).unwrap().value);
    }

    proptest! {
        #[test]
        fn logistic_symmetry(z in -700.0f64..700.0) {
            let s = logistic(z).unwrap() + logistic(-z).unwrap();
            prop_assert!((s - 1.0).abs() < 1e-15);
        }

        #[test]
        fn logistic_monotone(a in -30.0f64..30.0, d in 1e-3f64..10.0) {
            prop_assert!(logistic(a + d).unwrap() > logistic(a).unwrap());
        }

        #[test]
        fn bt_swap(w in -100.0f64..100.0, l in -100.0f64..100.0) {
            let a = bt_preference_prob(RewardPair::new(w, l).unwrap()).unwrap();
            let b = bt_preference_prob(RewardPair::new(l, w).unwrap()).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn prefer_loss_beta_margin_product(m in -50.0f64..50.0, beta in 0.01f64..2.0, k in 0.1f64..10.0) {
            // margin m realised as (lp_w, lp_l) = (−1000 + m, −1000)
            let hp1 = CpoHyperparams::new(beta, 1.0).unwrap();
            let hp2 = CpoHyperparams::new(beta / k, 1.0).unwrap();
            let l1 = cpo_prefer_loss(lp(-1000.0 + m, -1000.0), hp1).unwrap().value;
            let l2 = cpo_prefer_loss(lp(-1000.0 + m * k, -1000.0), hp2).unwrap().value;
            prop_assert!((l1 - l2).abs() <= 1e-9 * l1.max(1.0));
            prop_assert!(l1 > 0.0);
        }

        #[test]
        fn cpo_loss_dominates_nll(ws in proptest::collection::vec(-20.0f64..-0.01, 1..8),
                                  ls in proptest::collection::vec(-20.0f64..-0.01, 8),
                                  w in 0.0f64..3.0) {
            let batch: Vec<_> = ws.iter().zip(&ls).map(|(a, b)| lp(*a, *b)).collect();
            let hp = CpoHyperparams::new(0.1, w).unwrap();
            let total = cpo_loss(&batch, hp).unwrap().value;
            let nll = batch.iter().map(|p| -p.lp_w).sum::<f64>() / batch.len() as f64;
            prop_assert!(total > w * nll);
        }

        #[test]
        fn kl_nonnegative(raw_p in proptest::collection::vec(0.01f64..1.0, 5),
                          raw_q in proptest::collection::vec(0.01f64..1.0, 5)) {
            let sp: f64 = raw_p.iter().sum();
            let sq: f64 = raw_q.iter().sum();
            let p: Vec<f64> = raw_p.iter().map(|x| x / sp).collect();
            let q: Vec<f64> = raw_q.iter().map(|x| x / sq).collect();
            prop_assert!(kl_next_token(&p, &q).unwrap() >= 0.0);
            prop_assert_eq!(kl_next_token(&p, &p).unwrap(), 0.0);
        }
    }
}
