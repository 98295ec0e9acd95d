use std::fs;
use std::path::{Path, PathBuf};

use ctcgmm::data::{SyntheticTaskSpec, TaskParams};
use ctcgmm::model::{parse_key_values, ModelConfig, TrainOptions};

use crate::error::{usage, CliError, CliResult};

pub const SEED_ENV: &str = "CTCGMM_SEED";

/// Everything a `train`, `decode` or `bench` run needs.
///
/// Model keys are those of [`ModelConfig`]. The remaining keys and defaults:
///
/// | key | default |
/// |---|---|
/// | `experiment` | `run` |
/// | `task_spec` | none; task parameters file used to generate the corpora |
/// | `data_seed` | `1`; the `--seed` given to `gen-data` |
/// | `speech_corpus` | `speech.tsv` |
/// | `mt_corpus` | none |
/// | `steps` | `1000` |
/// | `batch_size` | `8` |
/// | `log_every` | `50` |
/// | `checkpoint_every` | `0` |
/// | `checkpoint_path` | `<experiment>.ckpt` |
/// | `metric_path` | `<experiment>.metrics.tsv` |
///
/// Relative paths resolve against the config file's directory.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub experiment: String,
    pub task_spec: Option<PathBuf>,
    pub data_seed: u64,
    pub speech_corpus: PathBuf,
    pub mt_corpus: Option<PathBuf>,
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub metric_path: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainOptions::default();
        Self {
            model: ModelConfig::default(),
            experiment: "run".into(),
            task_spec: None,
            data_seed: 1,
            speech_corpus: PathBuf::from("speech.tsv"),
            mt_corpus: None,
            steps: t.steps,
            batch_size: t.batch_size,
            log_every: t.log_every,
            checkpoint_every: t.checkpoint_every,
            checkpoint_path: None,
            metric_path: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> CliResult<T> {
    value
        .parse()
        .map_err(|_| usage(format!("invalid value {value:?} for {key}")))
}

impl RunConfig {
    /// Parses config text. `seed_override` replaces the model seed when set.
    pub fn parse(text: &str, origin: &Path, seed_override: Option<&str>) -> CliResult<Self> {
        let base = origin.parent().unwrap_or(Path::new(""));
        let path = |v: &str| base.join(v);
        let mut cfg = Self {
            speech_corpus: path("speech.tsv"),
            ..Self::default()
        };
        for (line, key, value) in parse_key_values(text, origin)? {
            match key.as_str() {
                "experiment" => cfg.experiment = value,
                "task_spec" => cfg.task_spec = Some(path(&value)),
                "data_seed" => cfg.data_seed = parse(&key, &value)?,
                "speech_corpus" => cfg.speech_corpus = path(&value),
                "mt_corpus" => cfg.mt_corpus = Some(path(&value)),
                "steps" => cfg.steps = parse(&key, &value)?,
                "batch_size" => cfg.batch_size = parse(&key, &value)?,
                "log_every" => cfg.log_every = parse(&key, &value)?,
                "checkpoint_every" => cfg.checkpoint_every = parse(&key, &value)?,
                "checkpoint_path" => cfg.checkpoint_path = Some(path(&value)),
                "metric_path" => cfg.metric_path = Some(path(&value)),
                _ => {
                    if !cfg.model.set(&key, &value)? {
                        return Err(ctcgmm::Error::Parse {
                            path: origin.to_path_buf(),
                            line,
                            msg: format!("unknown key {key:?}"),
                        }
                        .into());
                    }
                }
            }
        }
        if let Some(seed) = seed_override {
            cfg.model.seed = seed
                .trim()
                .parse()
                .map_err(|_| usage(format!("{SEED_ENV}={seed:?} is not an unsigned integer")))?;
        }
        cfg.checkpoint_path
            .get_or_insert_with(|| base.join(format!("{}.ckpt", cfg.experiment)));
        cfg.metric_path
            .get_or_insert_with(|| base.join(format!("{}.metrics.tsv", cfg.experiment)));
        cfg.model.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applying the `CTCGMM_SEED` override from the environment.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = read_text(path)?;
        let seed = std::env::var(SEED_ENV).ok();
        Self::parse(&text, path, seed.as_deref())
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.steps,
            batch_size: self.batch_size,
            log_every: self.log_every,
            checkpoint_every: self.checkpoint_every,
            checkpoint_path: self.checkpoint_path.clone(),
            metric_path: self.metric_path.clone(),
        }
    }

    /// The synthetic task the corpora came from; checks vocabulary agreement.
    pub fn task(&self) -> CliResult<SyntheticTaskSpec> {
        let path = self
            .task_spec
            .as_ref()
            .ok_or_else(|| usage("config has no task_spec; features cannot be generated"))?;
        let spec = load_task(path)?;
        for (key, have, want) in [
            ("src_vocab", self.model.src_vocab, spec.src_vocab_size()),
            ("tgt_vocab", self.model.tgt_vocab, spec.tgt_vocab_size()),
            ("feature_dim", self.model.feature_dim, spec.feature_dim()),
        ] {
            if have != want {
                return Err(usage(format!("{key}={have} but the task spec needs {want}")));
            }
        }
        Ok(spec)
    }
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_task(path: &Path) -> CliResult<SyntheticTaskSpec> {
    let params = TaskParams::from_kv_str(&read_text(path)?, path)?;
    Ok(SyntheticTaskSpec::new(params)?)
}
