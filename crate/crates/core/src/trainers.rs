//! Maximum-likelihood pretraining and policy-gradient fine-tuning.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_to_query, PairSet};
use crate::error::{Error, Result};
use crate::model::{NlExpression, SelectionMask, SelectionModel};
use crate::numgrad::{Adam, AdamConfig, Optimizer, ParamStore, Sgd};
use crate::search::{average_precision, Index, RelevanceJudgments};
use crate::textproc::Token;
use crate::Scalar;

/// Derives an independent 64-bit stream seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const MLE_STREAM: u64 = 1;
const RL_SHUFFLE_STREAM: u64 = 2;
const RL_SAMPLE_STREAM: u64 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Epochs of maximum-likelihood pretraining.
    pub mle_iterations: usize,
    /// Epochs of policy-gradient fine-tuning.
    pub rl_iterations: usize,
    pub adam: AdamConfig,
    pub sgd_lr: f64,
    pub baseline_decay: f64,
    /// Masks sampled per expression per update.
    pub rl_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 12,
            mle_iterations: 100,
            rl_iterations: 1000,
            adam: AdamConfig::default(),
            sgd_lr: 1e-2,
            baseline_decay: 0.9,
            rl_samples: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n_pairs: usize) -> Result<()> {
        if n_pairs == 0 {
            return Err(Error::config("training needs at least one pair"));
        }
        if self.batch_size == 0 || self.batch_size > n_pairs {
            return Err(Error::config(format!(
                "batch_size {} must be in 1..={n_pairs}",
                self.batch_size
            )));
        }
        if self.rl_samples == 0 {
            return Err(Error::config("rl_samples must be positive"));
        }
        let a = &self.adam;
        let positive = [a.lr, a.beta1, a.beta2, a.eps, self.sgd_lr];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) || a.beta1 >= 1.0 || a.beta2 >= 1.0 {
            return Err(Error::config("optimizer settings must be positive and finite, betas below 1"));
        }
        if !(0.0..=1.0).contains(&self.baseline_decay) {
            return Err(Error::config("baseline_decay must lie in [0, 1]"));
        }
        Ok(())
    }
}

fn epoch_batches<R: Rng>(n: usize, batch: usize, rng: &mut R) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(|c| c.to_vec()).collect()
}

/// Maximum-likelihood pretraining with Adam, one step per minibatch.
///
/// Returns the mean negative log-likelihood per pair for every epoch.
pub fn train_mle<F: Scalar>(
    model: &mut SelectionModel<F>,
    pairs: &PairSet<F>,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate(pairs.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, MLE_STREAM));
    let mut adam = Adam::new(cfg.adam);
    let mut curve = Vec::with_capacity(cfg.mle_iterations);
    for epoch in 0..cfg.mle_iterations {
        let mut total = 0.0;
        for (b, batch) in epoch_batches(pairs.len(), cfg.batch_size, &mut rng).iter().enumerate() {
            model.zero_grad();
            for &i in batch {
                let p = &pairs.pairs[i];
                let ll = model.accumulate_log_likelihood(&p.nl, &p.mask, -F::one())?;
                let nll = -ll.to_f64_lossless();
                if !nll.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "negative log-likelihood {nll} at epoch {epoch}, batch {b}, topic {}",
                        p.topic_id
                    )));
                }
                total += nll;
            }
            if !model.grad_is_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient at epoch {epoch}, batch {b}"
                )));
            }
            adam.step(model);
        }
        model.zero_grad();
        curve.push(total / pairs.len() as f64);
    }
    Ok(curve)
}

/// Scores a generated keyword query for a topic.
pub trait RewardModel: Sync {
    fn reward(&self, topic_id: &str, query: &[Token]) -> Result<f64>;
}

/// Average precision of the BM25 ranking for the query.
#[derive(Clone, Copy, Debug)]
pub struct RewardContext<'a> {
    pub index: &'a Index,
    pub judgments: &'a RelevanceJudgments,
    pub rank_depth: usize,
}

impl<'a> RewardContext<'a> {
    pub fn new(index: &'a Index, judgments: &'a RelevanceJudgments) -> Self {
        RewardContext {
            index,
            judgments,
            rank_depth: 1000,
        }
    }

    /// Fails on the first topic without a non-empty relevant set.
    pub fn check_topics<'t, I: IntoIterator<Item = &'t str>>(&self, topics: I) -> Result<()> {
        for t in topics {
            match self.judgments.relevant(t) {
                Some(r) if !r.is_empty() => {}
                _ => return Err(Error::MissingJudgments(t.to_string())),
            }
        }
        Ok(())
    }
}

impl RewardModel for RewardContext<'_> {
    fn reward(&self, topic_id: &str, query: &[Token]) -> Result<f64> {
        let relevant = match self.judgments.relevant(topic_id) {
            Some(r) if !r.is_empty() => r,
            _ => return Err(Error::MissingJudgments(topic_id.to_string())),
        };
        if query.is_empty() {
            return Ok(0.0);
        }
        average_precision(&self.index.search(query, self.rank_depth), relevant)
    }
}

/// Adapts a closure into a [`RewardModel`].
pub struct FnReward<G>(pub G);

impl<G> RewardModel for FnReward<G>
where
    G: Fn(&str, &[Token]) -> Result<f64> + Sync,
{
    fn reward(&self, topic_id: &str, query: &[Token]) -> Result<f64> {
        (self.0)(topic_id, query)
    }
}

/// Reward of the query materialized from `mask` over `x`.
pub fn mask_reward<F: Scalar, R: RewardModel + ?Sized>(
    reward: &R,
    topic_id: &str,
    x: &NlExpression<F>,
    mask: &SelectionMask,
) -> Result<f64> {
    reward.reward(topic_id, &mask_to_query(x.tokens(), mask)?)
}

/// Rewards observed during one accumulation, in sampling order.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicySample {
    pub mask: SelectionMask,
    pub reward: f64,
    pub advantage: f64,
}

/// Samples `samples` masks per batch member, evaluates their rewards (in
/// parallel) and adds `Σ (−(R − b)/samples) · ∇ log p(ŷ|x)` into the gradient
/// accumulators.
pub fn accumulate_policy_gradient<F, R, G>(
    model: &mut SelectionModel<F>,
    batch: &[(&NlExpression<F>, &str)],
    reward: &R,
    baseline: f64,
    samples: usize,
    rng: &mut G,
) -> Result<Vec<PolicySample>>
where
    F: Scalar,
    R: RewardModel + ?Sized,
    G: Rng + ?Sized,
{
    let mut drawn = Vec::with_capacity(batch.len() * samples);
    for &(x, topic) in batch {
        for _ in 0..samples {
            drawn.push((x, topic, model.sample(x, rng)?));
        }
    }
    let rewards: Vec<f64> = drawn
        .par_iter()
        .map(|(x, topic, s)| mask_reward(reward, topic, x, &s.mask))
        .collect::<Result<_>>()?;
    let k = F::lit(samples as f64);
    let mut out = Vec::with_capacity(drawn.len());
    for ((x, _, s), r) in drawn.into_iter().zip(rewards) {
        if !r.is_finite() {
            return Err(Error::NonFinite(format!("reward {r}")));
        }
        let advantage = r - baseline;
        model.backward(x, &s.trace, -F::lit(advantage) / k);
        out.push(PolicySample {
            mask: s.mask,
            reward: r,
            advantage,
        });
    }
    Ok(out)
}

/// Exponential moving average of rewards.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub value: f64,
    pub decay: f64,
}

impl Baseline {
    pub fn new(decay: f64) -> Self {
        Baseline { value: 0.0, decay }
    }

    pub fn update(&mut self, mean_reward: f64) {
        self.value = self.decay * self.value + (1.0 - self.decay) * mean_reward;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpdateStats {
    pub samples: Vec<PolicySample>,
    pub mean_reward: f64,
    /// Whether the optimizer moved the parameters.
    pub stepped: bool,
}

/// One policy-gradient update: accumulate, refresh the baseline, take one SGD step.
pub fn reinforce_update<F, R, G>(
    model: &mut SelectionModel<F>,
    batch: &[(&NlExpression<F>, &str)],
    reward: &R,
    baseline: &mut Baseline,
    sgd: &mut Sgd<F>,
    samples: usize,
    rng: &mut G,
) -> Result<UpdateStats>
where
    F: Scalar,
    R: RewardModel + ?Sized,
    G: Rng + ?Sized,
{
    model.zero_grad();
    let drawn = accumulate_policy_gradient(model, batch, reward, baseline.value, samples, rng)?;
    if !model.grad_is_finite() {
        return Err(Error::NonFinite("policy gradient".into()));
    }
    let mean_reward = drawn.iter().map(|s| s.reward).sum::<f64>() / drawn.len().max(1) as f64;
    baseline.update(mean_reward);
    let stepped = sgd.step(model);
    model.zero_grad();
    Ok(UpdateStats {
        samples: drawn,
        mean_reward,
        stepped,
    })
}

/// Policy-gradient fine-tuning with SGD and a moving-average baseline.
///
/// Returns the mean sampled reward for every epoch.
pub fn train_rl<F, R>(
    model: &mut SelectionModel<F>,
    pairs: &PairSet<F>,
    reward: &R,
    cfg: &TrainConfig,
) -> Result<Vec<f64>>
where
    F: Scalar,
    R: RewardModel + ?Sized,
{
    cfg.validate(pairs.len())?;
    let mut shuffle = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, RL_SHUFFLE_STREAM));
    let mut sampler = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, RL_SAMPLE_STREAM));
    let mut sgd = Sgd::new(F::lit(cfg.sgd_lr));
    let mut baseline = Baseline::new(cfg.baseline_decay);
    let mut curve = Vec::with_capacity(cfg.rl_iterations);
    for epoch in 0..cfg.rl_iterations {
        let mut total = 0.0;
        let mut count = 0usize;
        for batch in epoch_batches(pairs.len(), cfg.batch_size, &mut shuffle) {
            let items: Vec<(&NlExpression<F>, &str)> = batch
                .iter()
                .map(|&i| (&pairs.pairs[i].nl, pairs.pairs[i].topic_id.as_str()))
                .collect();
            let stats = reinforce_update(model, &items, reward, &mut baseline, &mut sgd, cfg.rl_samples, &mut sampler)
                .map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("{m} at epoch {epoch}")),
                    e => e,
                })?;
            total += stats.samples.iter().map(|s| s.reward).sum::<f64>();
            count += stats.samples.len();
        }
        curve.push(total / count as f64);
    }
    Ok(curve)
}

/// Greedy decode followed by materialization.
pub fn rewrite<F: Scalar>(model: &SelectionModel<F>, x: &NlExpression<F>) -> Result<Vec<Token>> {
    let mask = model.greedy(x)?;
    mask_to_query(x.tokens(), &mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Pair;
    use crate::model::ModelConfig;
    use crate::search::Document;
    use crate::textproc::tokenize;

    fn expr(words: &str, d: usize, seed: u64) -> NlExpression<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tokens = tokenize(words);
        let emb = tokens
            .iter()
            .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        NlExpression::new(tokens, emb).unwrap()
    }

    fn pair_set(n: usize) -> PairSet<f64> {
        let pairs = (0..n)
            .map(|k| {
                let nl = expr("find documents about red apples", 6, k as u64);
                Pair {
                    topic_id: format!("t{k}"),
                    mask: SelectionMask::from_bits(&[0, 0, 0, (k % 2) as u8, 1]),
                    query: tokenize("apples"),
                    nl,
                }
            })
            .collect();
        PairSet { pairs }
    }

    fn cfg(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mle_memorizes_one_pair() {
        let set = pair_set(1);
        let mut m = SelectionModel::<f64>::new(ModelConfig::new(6, 32, 1)).unwrap();
        let c = TrainConfig {
            batch_size: 1,
            mle_iterations: 200,
            ..cfg(4)
        };
        let curve = train_mle(&mut m, &set, &c).unwrap();
        assert_eq!(curve.len(), 200);
        let n = set.pairs[0].nl.len() as f64;
        let nll = -m.log_likelihood(&set.pairs[0].nl, &set.pairs[0].mask).unwrap();
        assert!(nll < 0.05 * n, "nll {nll}");
        assert_eq!(m.greedy(&set.pairs[0].nl).unwrap(), set.pairs[0].mask);
    }

    #[test]
    fn zero_epochs_leave_model_unchanged() {
        let set = pair_set(12);
        let mut m = SelectionModel::<f64>::new(ModelConfig::new(6, 4, 2)).unwrap();
        let before = m.clone();
        let c = TrainConfig {
            mle_iterations: 0,
            rl_iterations: 0,
            ..cfg(1)
        };
        assert!(train_mle(&mut m, &set, &c).unwrap().is_empty());
        let r = FnReward(|_: &str, _: &[Token]| Ok(1.0));
        assert!(train_rl(&mut m, &set, &r, &c).unwrap().is_empty());
        assert_eq!(m, before);
    }

    #[test]
    fn training_is_deterministic() {
        let set = pair_set(14);
        let c = TrainConfig {
            mle_iterations: 3,
            rl_iterations: 3,
            ..cfg(9)
        };
        let run = || {
            let mut m = SelectionModel::<f64>::new(ModelConfig::new(6, 4, 3)).unwrap();
            let a = train_mle(&mut m, &set, &c).unwrap();
            let r = FnReward(|_: &str, q: &[Token]| Ok(q.len() as f64 / 5.0));
            let b = train_rl(&mut m, &set, &r, &c).unwrap();
            (a, b, m.flat_values())
        };
        let (a, b, v) = run();
        let (a2, b2, v2) = run();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
        assert_eq!(v.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), v2.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        let set = pair_set(5);
        let mut m = SelectionModel::<f64>::new(ModelConfig::new(6, 4, 3)).unwrap();
        assert!(matches!(train_mle(&mut m, &set, &cfg(0)), Err(Error::Config(_))));
        assert!(train_mle(&mut m, &PairSet::default(), &cfg(0)).is_err());
    }

    fn toy_index() -> (Index, RelevanceJudgments) {
        let docs = [("d1", "a a a"), ("d2", "a a b"), ("d3", "a b b"), ("d4", "c c z")]
            .iter()
            .map(|(id, t)| Document {
                doc_id: id.to_string(),
                tokens: tokenize(t),
            })
            .collect::<Vec<_>>();
        let mut j = RelevanceJudgments::new();
        j.add("t1", "d1");
        j.add("t1", "d3");
        j.add("t2", "d4");
        (Index::build(&docs).unwrap(), j)
    }

    #[test]
    fn reward_examples() {
        let (index, j) = toy_index();
        let ctx = RewardContext::new(&index, &j);
        let x = expr("find a z", 3, 0);
        let r = mask_reward(&ctx, "t1", &x, &SelectionMask::from_bits(&[0, 1, 0])).unwrap();
        assert!((r - 5.0 / 6.0).abs() < 1e-12);
        let r = mask_reward(&ctx, "t2", &x, &SelectionMask::from_bits(&[0, 0, 1])).unwrap();
        assert_eq!(r, 1.0);
        assert_eq!(mask_reward(&ctx, "t1", &x, &SelectionMask::zeros(3)).unwrap(), 0.0);
        assert!(matches!(
            mask_reward(&ctx, "t9", &x, &SelectionMask::ones(3)),
            Err(Error::MissingJudgments(_))
        ));
        assert!(ctx.check_topics(["t1", "t2"]).is_ok());
        assert!(ctx.check_topics(["t1", "t3"]).is_err());
    }

    #[test]
    fn zero_advantage_is_a_no_op() {
        let mut m = SelectionModel::<f64>::new(ModelConfig::new(6, 4, 5)).unwrap();
        let before = m.clone();
        let x = expr("find documents about red apples", 6, 1);
        let batch = vec![(&x, "t"); 4];
        let r = FnReward(|_: &str, _: &[Token]| Ok(0.25));
        let mut b = Baseline { value: 0.25, decay: 0.9 };
        let mut sgd = Sgd::new(1e-2);
        let stats = reinforce_update(&mut m, &batch, &r, &mut b, &mut sgd, 1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(!stats.stepped);
        assert_eq!(m, before);
        // zero rewards with a zero baseline
        let r0 = FnReward(|_: &str, _: &[Token]| Ok(0.0));
        let mut b = Baseline::new(0.9);
        let stats = reinforce_update(&mut m, &batch, &r0, &mut b, &mut sgd, 1, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(!stats.stepped);
        assert_eq!(m, before);
        assert_eq!(b.value, 0.0);
    }

    #[test]
    fn doubling_rewards_doubles_gradient() {
        let x = expr("find documents about red apples", 6, 1);
        let y = expr("what are green pears", 6, 2);
        let batch = vec![(&x, "a"), (&y, "b"), (&x, "c")];
        let grad = |scale: f64| {
            let mut m = SelectionModel::<f64>::new(ModelConfig::new(6, 4, 5)).unwrap();
            let r = FnReward(move |_: &str, q: &[Token]| Ok(scale * q.len() as f64 / 7.0));
            accumulate_policy_gradient(&mut m, &batch, &r, scale * 0.3, 2, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
            m.flat_grad()
        };
        let g1 = grad(1.0);
        let g2 = grad(2.0);
        assert!(g1.iter().any(|v| *v != 0.0));
        for (a, b) in g1.iter().zip(&g2) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn batch_gradient_is_sum_of_examples() {
        let x = expr("find documents about red apples", 6, 1);
        let y = expr("what are green pears", 6, 2);
        let batch = vec![(&x, "a"), (&y, "b"), (&x, "c")];
        let base = SelectionModel::<f64>::new(ModelConfig::new(6, 4, 7)).unwrap();
        let reward = |q: &[Token]| q.len() as f64 / 7.0;
        let r = FnReward(move |_: &str, q: &[Token]| Ok(reward(q)));
        let b = 0.2;

        let mut m = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        accumulate_policy_gradient(&mut m, &batch, &r, b, 1, &mut rng).unwrap();
        let total = m.flat_grad();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut expected = vec![0.0; total.len()];
        for (e, _) in &batch {
            let s = base.sample(e, &mut rng).unwrap();
            let q = mask_to_query(e.tokens(), &s.mask).unwrap();
            let mut single = base.clone();
            single.backward(e, &s.trace, -(reward(&q) - b));
            for (acc, g) in expected.iter_mut().zip(single.flat_grad()) {
                *acc += g;
            }
        }
        for (a, e) in total.iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn baseline_moves_toward_mean() {
        let mut b = Baseline::new(0.9);
        b.update(1.0);
        assert!((b.value - 0.1).abs() < 1e-15);
        b.update(1.0);
        assert!((b.value - 0.19).abs() < 1e-15);
    }

    #[test]
    fn seeds_are_distinct_streams() {
        assert_ne!(derive_seed(1, 1), derive_seed(1, 2));
        assert_ne!(derive_seed(1, 1), derive_seed(2, 1));
        assert_eq!(derive_seed(5, 9), derive_seed(5, 9));
    }
}
