//! Cross-validated comparison of query formulation strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{index::sample, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{mask_to_query, project_query, PairSet};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SelectionMask, SelectionModel};
use crate::stats::{paired_t_test, TTest};
use crate::textproc::Token;
use crate::trainers::{derive_seed, rewrite, train_mle, train_rl, RewardContext, RewardModel, TrainConfig};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    Nl,
    Q,
    QBin,
    Random,
    Smt,
    Rl,
    SmtRl,
}

impl BaselineKind {
    /// Report order.
    pub const ALL: [BaselineKind; 7] = [
        BaselineKind::Nl,
        BaselineKind::Q,
        BaselineKind::QBin,
        BaselineKind::Random,
        BaselineKind::Smt,
        BaselineKind::Rl,
        BaselineKind::SmtRl,
    ];

    pub fn label(self) -> &'static str {
        match self {
            BaselineKind::Nl => "NL",
            BaselineKind::Q => "Q",
            BaselineKind::QBin => "Q bin",
            BaselineKind::Random => "Random",
            BaselineKind::Smt => "SMT",
            BaselineKind::Rl => "RL",
            BaselineKind::SmtRl => "SMT+RL",
        }
    }

    pub fn is_trained(self) -> bool {
        matches!(self, BaselineKind::Smt | BaselineKind::Rl | BaselineKind::SmtRl)
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_' && *c != '-')
            .collect::<String>()
            .to_ascii_uppercase();
        Ok(match norm.as_str() {
            "NL" => BaselineKind::Nl,
            "Q" => BaselineKind::Q,
            "QBIN" => BaselineKind::QBin,
            "RANDOM" => BaselineKind::Random,
            "SMT" => BaselineKind::Smt,
            "RL" => BaselineKind::Rl,
            "SMT+RL" | "SMTRL" => BaselineKind::SmtRl,
            _ => return Err(Error::config(format!("unknown baseline '{s}'"))),
        })
    }
}

/// Seeded shuffle into `k` folds; the first `n mod k` folds get one extra item.
pub fn kfold_split(n_items: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k == 0 || n_items < k {
        return Err(Error::config(format!("cannot split {n_items} items into {k} folds")));
    }
    let mut order: Vec<usize> = (0..n_items).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n_items / k, n_items % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        folds.push(order[start..start + size].to_vec());
        start += size;
    }
    Ok(folds)
}

fn topic_seed(seed: u64, topic_id: &str) -> u64 {
    let digest = Sha256::digest(topic_id.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    derive_seed(seed, u64::from_le_bytes(b))
}

/// Three distinct positions drawn uniformly (all positions when `n < 3`),
/// seeded by `(seed, topic_id)`.
pub fn random_mask(n: usize, seed: u64, topic_id: &str) -> SelectionMask {
    let mut mask = SelectionMask::zeros(n);
    let mut rng = ChaCha8Rng::seed_from_u64(topic_seed(seed, topic_id));
    for i in sample(&mut rng, n, n.min(3)) {
        mask.set(i, true);
    }
    mask
}

/// Pooled mean over every topic of every fold.
pub fn mean_ap<L: AsRef<[f64]>>(ap_lists: &[L]) -> Result<f64> {
    let n: usize = ap_lists.iter().map(|l| l.as_ref().len()).sum();
    if n == 0 {
        return Err(Error::invalid("mean average precision over no topics"));
    }
    Ok(ap_lists.iter().flat_map(|l| l.as_ref().iter()).sum::<f64>() / n as f64)
}

/// Relative improvement of `ours` over `baseline`, in percent.
pub fn pct_change(ours: f64, baseline: f64) -> Result<f64> {
    if baseline.is_nan() || baseline <= 0.0 {
        return Err(Error::invalid(format!("percent change against baseline {baseline}")));
    }
    Ok((ours - baseline) / baseline * 100.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub folds: usize,
    pub hidden: usize,
    pub rank_depth: usize,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            folds: 10,
            hidden: 100,
            rank_depth: 1000,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl EvalConfig {
    fn fold_model(&self, embed_dim: usize, fold: usize) -> ModelConfig {
        ModelConfig::new(embed_dim, self.hidden, derive_seed(self.seed, 1000 + fold as u64))
    }

    fn fold_train(&self, fold: usize) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.seed, 2000 + fold as u64),
            ..self.train
        }
    }
}

/// Per-topic results of one held-out fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub topics: Vec<String>,
    pub ap: BTreeMap<BaselineKind, Vec<f64>>,
    pub mle_curve: Vec<f64>,
    pub rl_curve: Vec<f64>,
    pub rl_scratch_curve: Vec<f64>,
}

fn ap_of<R: RewardModel + ?Sized>(ctx: &R, topic: &str, query: &[Token]) -> Result<f64> {
    ctx.reward(topic, query)
}

/// Per-topic AP of one strategy over `test`, training on `train` when needed.
pub fn run_baseline<F: Scalar>(
    kind: BaselineKind,
    train: &PairSet<F>,
    test: &PairSet<F>,
    ctx: &RewardContext<'_>,
    cfg: &EvalConfig,
    fold: usize,
) -> Result<Vec<f64>> {
    let mut r = run_fold(&[kind], train, test, ctx, cfg, fold)?;
    Ok(r.ap.remove(&kind).unwrap_or_default())
}

/// Runs every requested strategy on one fold. The SMT model is shared with
/// SMT+RL, which continues from it.
pub fn run_fold<F: Scalar>(
    kinds: &[BaselineKind],
    train: &PairSet<F>,
    test: &PairSet<F>,
    ctx: &RewardContext<'_>,
    cfg: &EvalConfig,
    fold: usize,
) -> Result<FoldResult> {
    let ctx = RewardContext {
        rank_depth: cfg.rank_depth,
        ..*ctx
    };
    let topics: Vec<String> = test.pairs.iter().map(|p| p.topic_id.clone()).collect();
    let mut out = FoldResult {
        fold,
        topics,
        ap: BTreeMap::new(),
        mle_curve: Vec::new(),
        rl_curve: Vec::new(),
        rl_scratch_curve: Vec::new(),
    };
    let embed_dim = test
        .pairs
        .first()
        .or(train.pairs.first())
        .map(|p| p.nl.embed_dim())
        .unwrap_or(1);
    let tcfg = cfg.fold_train(fold);
    let mcfg = cfg.fold_model(embed_dim, fold);

    let score = |model: &SelectionModel<F>| -> Result<Vec<f64>> {
        test.pairs
            .iter()
            .map(|p| ap_of(&ctx, &p.topic_id, &rewrite(model, &p.nl)?))
            .collect()
    };

    let want = |k: BaselineKind| kinds.contains(&k);
    for kind in [BaselineKind::Nl, BaselineKind::Q, BaselineKind::QBin, BaselineKind::Random] {
        if !want(kind) {
            continue;
        }
        let aps = test
            .pairs
            .iter()
            .map(|p| {
                let tokens = p.nl.tokens();
                let q = match kind {
                    BaselineKind::Nl => tokens.to_vec(),
                    BaselineKind::Q => p.query.clone(),
                    BaselineKind::QBin => project_query(tokens, &p.query),
                    _ => mask_to_query(tokens, &random_mask(tokens.len(), cfg.seed, &p.topic_id))?,
                };
                ap_of(&ctx, &p.topic_id, &q)
            })
            .collect::<Result<Vec<_>>>()?;
        out.ap.insert(kind, aps);
    }

    if want(BaselineKind::Smt) || want(BaselineKind::SmtRl) {
        let mut model = SelectionModel::<F>::new(mcfg)?;
        out.mle_curve = train_mle(&mut model, train, &tcfg)?;
        if want(BaselineKind::Smt) {
            out.ap.insert(BaselineKind::Smt, score(&model)?);
        }
        if want(BaselineKind::SmtRl) {
            out.rl_curve = train_rl(&mut model, train, &ctx, &tcfg)?;
            out.ap.insert(BaselineKind::SmtRl, score(&model)?);
        }
    }
    if want(BaselineKind::Rl) {
        let mut model = SelectionModel::<F>::new(mcfg)?;
        out.rl_scratch_curve = train_rl(&mut model, train, &ctx, &tcfg)?;
        out.ap.insert(BaselineKind::Rl, score(&model)?);
    }
    Ok(out)
}

/// k-fold cross-validation of the requested strategies; folds run concurrently.
pub fn cross_validate<F: Scalar>(
    pairs: &PairSet<F>,
    ctx: &RewardContext<'_>,
    kinds: &[BaselineKind],
    cfg: &EvalConfig,
) -> Result<Vec<FoldResult>> {
    ctx.check_topics(pairs.pairs.iter().map(|p| p.topic_id.as_str()))?;
    let folds = kfold_split(pairs.len(), cfg.folds, derive_seed(cfg.seed, 7))?;
    folds
        .par_iter()
        .enumerate()
        .map(|(f, test_idx)| {
            let train_idx: Vec<usize> = folds
                .iter()
                .enumerate()
                .filter(|(g, _)| *g != f)
                .flat_map(|(_, v)| v.iter().copied())
                .collect();
            run_fold(kinds, &pairs.subset(&train_idx), &pairs.subset(test_idx), ctx, cfg, f)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub kind: BaselineKind,
    pub map: f64,
    /// Improvement of SMT+RL over this row; absent on the SMT+RL row itself.
    pub pct_chg: Option<f64>,
    pub test: Option<TTest>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub topics: usize,
    pub map: BTreeMap<BaselineKind, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportEcho {
    pub folds: usize,
    pub seed: u64,
    pub rank_depth: usize,
    pub hidden: usize,
    pub mle_iterations: usize,
    pub rl_iterations: usize,
    pub aggregation: String,
    pub significance: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
    pub folds: Vec<FoldSummary>,
    pub config: ReportEcho,
}

fn pooled(results: &[FoldResult], kind: BaselineKind) -> Vec<f64> {
    results
        .iter()
        .flat_map(|r| r.ap.get(&kind).into_iter().flatten().copied())
        .collect()
}

/// One row per requested strategy in report order, with percent change and
/// paired significance of SMT+RL against each.
pub fn build_report(results: &[FoldResult], kinds: &[BaselineKind], cfg: &EvalConfig) -> Result<EvalReport> {
    let selected: Vec<BaselineKind> = BaselineKind::ALL.iter().copied().filter(|k| kinds.contains(k)).collect();
    let ours = if selected.contains(&BaselineKind::SmtRl) {
        Some(pooled(results, BaselineKind::SmtRl))
    } else {
        None
    };
    let ours_map = ours.as_ref().map(|v| mean_ap(&[v])).transpose()?;
    let mut rows = Vec::with_capacity(selected.len());
    for kind in selected {
        let aps = pooled(results, kind);
        let map = mean_ap(&[&aps])?;
        let (pct_chg, test) = match (&ours, ours_map) {
            (Some(o), Some(om)) if kind != BaselineKind::SmtRl => (
                pct_change(om, map).ok(),
                if aps.len() >= 2 { Some(paired_t_test(o, &aps)?) } else { None },
            ),
            _ => (None, None),
        };
        rows.push(ReportRow { kind, map, pct_chg, test });
    }
    let folds = results
        .iter()
        .map(|r| {
            Ok(FoldSummary {
                fold: r.fold,
                topics: r.topics.len(),
                map: r
                    .ap
                    .iter()
                    .map(|(k, v)| Ok((*k, if v.is_empty() { 0.0 } else { mean_ap(&[v])? })))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(EvalReport {
        rows,
        folds,
        config: ReportEcho {
            folds: cfg.folds,
            seed: cfg.seed,
            rank_depth: cfg.rank_depth,
            hidden: cfg.hidden,
            mle_iterations: cfg.train.mle_iterations,
            rl_iterations: cfg.train.rl_iterations,
            aggregation: "micro average over pooled test topics".into(),
            significance: "paired t-test on pooled per-topic AP, SMT+RL vs row".into(),
        },
    })
}

fn star_str(t: &Option<TTest>) -> String {
    "*".repeat(t.map_or(0, |t| t.stars as usize))
}

impl EvalReport {
    pub fn row(&self, kind: BaselineKind) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.kind == kind)
    }

    pub fn map(&self, kind: BaselineKind) -> Option<f64> {
        self.row(kind).map(|r| r.map)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("baseline\tmap\tpct_chg\tstars\tp_value\n");
        for r in &self.rows {
            let pct = r.pct_chg.map(|p| format!("{p:+.2}")).unwrap_or_default();
            let p = r.test.map(|t| format!("{:.6e}", t.p_value)).unwrap_or_default();
            s.push_str(&format!("{}\t{:.5}\t{}\t{}\t{}\n", r.kind, r.map, pct, star_str(&r.test), p));
        }
        s
    }

    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| {
                let pct = r
                    .pct_chg
                    .map(|p| format!("{p:+.2}%{}", star_str(&r.test)))
                    .unwrap_or_default();
                [r.kind.to_string(), format!("{:.5}", r.map), pct]
            })
            .collect();
        let header = ["Baseline".to_string(), "MAP".to_string(), "%Chg".to_string()];
        let mut w = [0usize; 3];
        for row in std::iter::once(&header).chain(&cells) {
            for (i, c) in row.iter().enumerate() {
                w[i] = w[i].max(c.chars().count());
            }
        }
        let line = |row: &[String; 3]| {
            format!("{:<w0$}  {:>w1$}  {:>w2$}", row[0], row[1], row[2], w0 = w[0], w1 = w[1], w2 = w[2])
                .trim_end()
                .to_string()
                + "\n"
        };
        let mut s = line(&header);
        s.push_str(&format!("{}\n", "-".repeat(w[0] + w[1] + w[2] + 4)));
        for c in &cells {
            s.push_str(&line(c));
        }
        s.push_str(&format!(
            "{} folds, seed {}, rank depth {}; {}; {}\n",
            self.config.folds, self.config.seed, self.config.rank_depth, self.config.aggregation, self.config.significance
        ));
        s
    }
}

/// Cross-validates and assembles the report.
pub fn evaluate<F: Scalar>(
    pairs: &PairSet<F>,
    ctx: &RewardContext<'_>,
    kinds: &[BaselineKind],
    cfg: &EvalConfig,
) -> Result<(EvalReport, Vec<FoldResult>)> {
    let results = cross_validate(pairs, ctx, kinds, cfg)?;
    Ok((build_report(&results, kinds, cfg)?, results))
}
