//! Run configuration file (TOML). Command-line flags take precedence.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wordsel::textproc::OovPolicy;

use crate::failure::Failure;

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub rank_depth: Option<usize>,
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub bm25: Bm25Section,
    #[serde(default)]
    pub synth: SynthSection,
    pub oov: Option<OovPolicy>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub index: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub topics: Option<PathBuf>,
    pub qrels: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub mode: Option<String>,
    pub hidden: Option<usize>,
    pub batch_size: Option<usize>,
    pub mle_iterations: Option<usize>,
    pub rl_iterations: Option<usize>,
    pub adam_lr: Option<f64>,
    pub adam_beta1: Option<f64>,
    pub adam_beta2: Option<f64>,
    pub adam_eps: Option<f64>,
    pub sgd_lr: Option<f64>,
    pub baseline_decay: Option<f64>,
    pub rl_samples: Option<usize>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub folds: Option<usize>,
    pub baselines: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bm25Section {
    pub k1: Option<f64>,
    pub b: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub docs: Option<usize>,
    pub pairs: Option<usize>,
    pub vocab: Option<usize>,
    pub dim: Option<usize>,
}

impl FileConfig {
    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<FileConfig, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let p = &mut cfg.paths;
        for slot in [
            &mut p.corpus,
            &mut p.index,
            &mut p.pairs,
            &mut p.topics,
            &mut p.qrels,
            &mut p.embeddings,
            &mut p.stopwords,
            &mut p.checkpoint,
            &mut p.report_dir,
        ] {
            if let Some(v) = slot.as_mut() {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        }
        Ok(cfg)
    }
}
