//! Experiment configuration: a flat, line-oriented `key = value` format with
//! `[dataset]`, `[model]`, `[run]`, and `[sweep]` sections.
//!
//! ```text
//! output_dir = out/sim1
//!
//! [dataset]
//! kind = sim1
//! clients = 100
//!
//! [model]
//! objective = least_squares
//!
//! [run]
//! algorithm = fediter_ht
//! tau = 200
//! rounds = 100
//! stepsize = 0.001
//!
//! [sweep]
//! stepsize = 0.01, 0.003, 0.001
//! ```
//!
//! `#` starts a comment; unknown keys are rejected with their line number.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use fedsparse_core::datagen::SyntheticSpec;
use fedsparse_core::federation::{
    Algorithm, BatchSchedule, RunConfig, StepsizeRule, WeightScheme,
};
use fedsparse_core::objectives::ObjectiveKind;
use fedsparse_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub run: RunSettings,
    pub sweep: Option<SweepConfig>,
    pub output_dir: PathBuf,
    /// Whether the config set an explicit `[dataset] seed` (a `--seed`
    /// override then leaves the data alone).
    dataset_seed_pinned: bool,
}

#[derive(Debug, Clone)]
pub enum DatasetConfig {
    Sim1(SyntheticSpec),
    Sim2(SyntheticSpec),
    Libsvm(LibsvmConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LibsvmTask {
    Regression,
    Classification,
}

#[derive(Debug, Clone)]
pub struct LibsvmConfig {
    pub path: PathBuf,
    pub task: LibsvmTask,
    pub dim_hint: Option<usize>,
    pub num_clients: usize,
    pub shards_per_category: usize,
    pub categories_per_client: usize,
    /// Categories for unlabeled regression data come from k-means.
    pub kmeans_clusters: usize,
    pub kmeans_max_iters: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ModelConfig {
    pub objective: ObjectiveKind,
    pub lambda: f64,
    pub num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub run: RunConfig,
    /// Target precision for theory reports.
    pub epsilon: f64,
}

/// Cross-product sweep; missing axes fall back to the `[run]` value.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub algorithms: Vec<Algorithm>,
    pub stepsizes: Vec<StepsizeRule>,
    pub local_steps: Vec<usize>,
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, origin: &str) -> Result<Self> {
        let mut sections = split_sections(text, origin)?;
        let mut top = sections.remove("").unwrap_or_default();
        let output_dir = PathBuf::from(
            top.take("output_dir")?
                .unwrap_or_else(|| "out".to_string()),
        );
        top.finish()?;

        let mut run_section = sections
            .remove("run")
            .ok_or_else(|| Error::Config(format!("{origin}: missing [run] section")))?;
        let run = parse_run(&mut run_section)?;
        run_section.finish()?;

        let mut dataset_section = sections
            .remove("dataset")
            .ok_or_else(|| Error::Config(format!("{origin}: missing [dataset] section")))?;
        let (dataset, dataset_seed_pinned) = parse_dataset(&mut dataset_section, run.run.seed)?;
        dataset_section.finish()?;

        let mut model_section = sections
            .remove("model")
            .ok_or_else(|| Error::Config(format!("{origin}: missing [model] section")))?;
        let model = parse_model(&mut model_section)?;
        model_section.finish()?;

        let sweep = match sections.remove("sweep") {
            Some(mut s) => {
                let sweep = parse_sweep(&mut s, &run)?;
                s.finish()?;
                Some(sweep)
            }
            None => None,
        };

        if let Some((name, section)) = sections.into_iter().next() {
            return Err(Error::Config(format!(
                "{}: unknown section [{name}]",
                section.origin
            )));
        }

        Ok(ExperimentConfig {
            dataset,
            model,
            run,
            sweep,
            output_dir,
            dataset_seed_pinned,
        })
    }

    /// Applies the `--seed` override: sets the run seed and drags the
    /// dataset seed along unless the config pinned one explicitly.
    pub fn override_seed(&mut self, seed: u64) {
        self.run.run.seed = seed;
        if self.dataset_seed_pinned {
            return;
        }
        match &mut self.dataset {
            DatasetConfig::Sim1(spec) | DatasetConfig::Sim2(spec) => spec.seed = seed,
            DatasetConfig::Libsvm(cfg) => cfg.seed = seed,
        }
    }
}

#[derive(Debug, Default)]
struct Section {
    origin: String,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Result<Option<String>> {
        Ok(self.entries.remove(key).map(|(v, _)| v))
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!(
                    "{}:{line}: cannot parse `{v}` for key `{key}`",
                    self.origin
                ))
            }),
        }
    }

    fn take_list<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>> {
        match self.entries.remove(key) {
            None => Ok(None),
            Some((v, line)) => {
                let items: std::result::Result<Vec<T>, _> = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::parse::<T>)
                    .collect();
                let items = items.map_err(|_| {
                    Error::Config(format!(
                        "{}:{line}: cannot parse list `{v}` for key `{key}`",
                        self.origin
                    ))
                })?;
                if items.is_empty() {
                    return Err(Error::Config(format!(
                        "{}:{line}: empty list for key `{key}`",
                        self.origin
                    )));
                }
                Ok(Some(items))
            }
        }
    }

    fn finish(self) -> Result<()> {
        if let Some((key, (_, line))) = self.entries.into_iter().next() {
            return Err(Error::Config(format!(
                "{}:{line}: unknown key `{key}`",
                self.origin
            )));
        }
        Ok(())
    }
}

fn split_sections(text: &str, origin: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current = String::new();
    sections.insert(String::new(), Section {
        origin: origin.to_string(),
        entries: BTreeMap::new(),
    });
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| Error::Config(format!("{origin}:{line_no}: unterminated section")))?
                .trim()
                .to_string();
            current = name.clone();
            sections.entry(name).or_insert_with(|| Section {
                origin: origin.to_string(),
                entries: BTreeMap::new(),
            });
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "{origin}:{line_no}: expected `key = value`, got `{line}`"
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section = sections.get_mut(&current).expect("section inserted above");
        if section.entries.contains_key(&key) {
            return Err(Error::Config(format!(
                "{origin}:{line_no}: duplicate key `{key}`"
            )));
        }
        section.entries.insert(key, (value, line_no));
    }
    Ok(sections)
}

fn parse_run(s: &mut Section) -> Result<RunSettings> {
    let algorithm = match s.take("algorithm")? {
        Some(v) => Algorithm::parse(&v)?,
        None => return Err(Error::Config(format!("{}: [run] needs `algorithm`", s.origin))),
    };
    let tau = s
        .take_parsed::<usize>("tau")?
        .ok_or_else(|| Error::Config(format!("{}: [run] needs `tau`", s.origin)))?;
    let rounds = s
        .take_parsed::<usize>("rounds")?
        .ok_or_else(|| Error::Config(format!("{}: [run] needs `rounds`", s.origin)))?;
    let local_steps = s.take_parsed::<usize>("local_steps")?.unwrap_or(5);
    let stepsize = match s.take("stepsize")? {
        None => StepsizeRule::Auto,
        Some(v) => parse_stepsize(&v, &s.origin)?,
    };
    let batch_gamma = s.take_parsed::<f64>("batch_gamma")?;
    let batch_omega = s.take_parsed::<f64>("batch_omega")?;
    let batch = s.take_parsed::<usize>("batch")?;
    let batch_schedule = match (batch_gamma, batch_omega) {
        (Some(gamma), Some(omega)) => {
            if batch.is_some() {
                return Err(Error::Config(format!(
                    "{}: give either `batch` or `batch_gamma`/`batch_omega`, not both",
                    s.origin
                )));
            }
            BatchSchedule::Geometric { gamma, omega }
        }
        (None, None) => BatchSchedule::Constant(batch.unwrap_or(32)),
        _ => {
            return Err(Error::Config(format!(
                "{}: geometric batch schedule needs both `batch_gamma` and `batch_omega`",
                s.origin
            )))
        }
    };
    let weights = match s.take("weights")? {
        None => WeightScheme::Uniform,
        Some(v) => {
            let v = v.trim();
            if v == "uniform" {
                WeightScheme::Uniform
            } else if v == "proportional" {
                WeightScheme::Proportional
            } else if let Some(list) = v.strip_prefix("explicit:") {
                let weights: std::result::Result<Vec<f64>, _> = list
                    .split(',')
                    .map(str::trim)
                    .filter(|x| !x.is_empty())
                    .map(str::parse::<f64>)
                    .collect();
                WeightScheme::Explicit(weights.map_err(|_| {
                    Error::Config(format!("{}: invalid explicit weights `{list}`", s.origin))
                })?)
            } else {
                return Err(Error::Config(format!(
                    "{}: unknown weights `{v}` (uniform | proportional | explicit: w1, w2, ...)",
                    s.origin
                )));
            }
        }
    };
    let record_every = s.take_parsed::<usize>("record_every")?.unwrap_or(1);
    let seed = s.take_parsed::<u64>("seed")?.unwrap_or(0);
    let epsilon = s.take_parsed::<f64>("epsilon")?.unwrap_or(1e-3);
    Ok(RunSettings {
        run: RunConfig {
            algorithm,
            tau,
            local_steps,
            rounds,
            stepsize,
            batch_schedule,
            weights,
            seed,
            record_every,
        },
        epsilon,
    })
}

fn parse_stepsize(v: &str, origin: &str) -> Result<StepsizeRule> {
    if v == "auto" {
        return Ok(StepsizeRule::Auto);
    }
    v.parse::<f64>()
        .map(StepsizeRule::Fixed)
        .map_err(|_| Error::Config(format!("{origin}: stepsize must be a number or `auto`, got `{v}`")))
}

fn parse_dataset(s: &mut Section, run_seed: u64) -> Result<(DatasetConfig, bool)> {
    let kind = s
        .take("kind")?
        .ok_or_else(|| Error::Config(format!("{}: [dataset] needs `kind`", s.origin)))?;
    let seed = s.take_parsed::<u64>("seed")?;
    let pinned = seed.is_some();
    let dataset = match kind.as_str() {
        "sim1" | "sim2" => {
            let mut spec = if kind == "sim1" {
                SyntheticSpec::sim1_defaults(seed.unwrap_or(run_seed))
            } else {
                SyntheticSpec::sim2_defaults(seed.unwrap_or(run_seed))
            };
            if let Some(v) = s.take_parsed::<usize>("clients")? {
                spec.num_clients = v;
            }
            if let Some(v) = s.take_parsed::<usize>("samples_per_client")? {
                spec.samples_per_client = v;
            }
            if let Some(v) = s.take_parsed::<usize>("dim")? {
                spec.dim = v;
            }
            if let Some(v) = s.take_parsed::<usize>("true_support_size")? {
                spec.true_support_size = v;
            }
            if let Some(v) = s.take_parsed::<f64>("alpha")? {
                spec.alpha = v;
            }
            if let Some(v) = s.take_parsed::<f64>("beta")? {
                spec.beta = v;
            }
            if let Some(v) = s.take_parsed::<bool>("shared_model")? {
                spec.shared_model = v;
            }
            Ok(if kind == "sim1" {
                DatasetConfig::Sim1(spec)
            } else {
                DatasetConfig::Sim2(spec)
            })
        }
        "libsvm" => {
            let path = s
                .take("path")?
                .ok_or_else(|| Error::Config(format!("{}: libsvm dataset needs `path`", s.origin)))?;
            let task = match s.take("task")?.as_deref() {
                Some("regression") => LibsvmTask::Regression,
                Some("classification") | None => LibsvmTask::Classification,
                Some(other) => {
                    return Err(Error::Config(format!(
                        "{}: unknown task `{other}` (regression | classification)",
                        s.origin
                    )))
                }
            };
            Ok(DatasetConfig::Libsvm(LibsvmConfig {
                path: PathBuf::from(path),
                task,
                dim_hint: s.take_parsed::<usize>("dim_hint")?,
                num_clients: s.take_parsed::<usize>("partition_clients")?.unwrap_or(100),
                shards_per_category: s.take_parsed::<usize>("shards_per_category")?.unwrap_or(20),
                categories_per_client: s
                    .take_parsed::<usize>("categories_per_client")?
                    .unwrap_or(2),
                kmeans_clusters: s.take_parsed::<usize>("kmeans_clusters")?.unwrap_or(10),
                kmeans_max_iters: s.take_parsed::<usize>("kmeans_max_iters")?.unwrap_or(100),
                seed: seed.unwrap_or(run_seed),
            }))
        }
        other => Err(Error::Config(format!(
            "{}: unknown dataset kind `{other}` (sim1 | sim2 | libsvm)",
            s.origin
        ))),
    }?;
    Ok((dataset, pinned))
}

fn parse_model(s: &mut Section) -> Result<ModelConfig> {
    let objective = match s
        .take("objective")?
        .ok_or_else(|| Error::Config(format!("{}: [model] needs `objective`", s.origin)))?
        .as_str()
    {
        "least_squares" => ObjectiveKind::LeastSquares,
        "logistic" => ObjectiveKind::Logistic,
        "softmax" => ObjectiveKind::Softmax,
        other => {
            return Err(Error::Config(format!(
                "{}: unknown objective `{other}` (least_squares | logistic | softmax)",
                s.origin
            )))
        }
    };
    let lambda = s.take_parsed::<f64>("lambda")?.unwrap_or(match objective {
        ObjectiveKind::LeastSquares => 0.0,
        _ => 1e-4,
    });
    let num_classes = s.take_parsed::<usize>("num_classes")?.unwrap_or(match objective {
        ObjectiveKind::Softmax => 10,
        _ => 1,
    });
    Ok(ModelConfig {
        objective,
        lambda,
        num_classes,
    })
}

fn parse_sweep(s: &mut Section, run: &RunSettings) -> Result<SweepConfig> {
    let algorithms = match s.take("algorithm")? {
        None => vec![run.run.algorithm],
        Some(v) => {
            let list: Result<Vec<Algorithm>> = v
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(Algorithm::parse)
                .collect();
            let list = list?;
            if list.is_empty() {
                return Err(Error::Config(format!("{}: empty algorithm sweep", s.origin)));
            }
            list
        }
    };
    let stepsizes = match s.take("stepsize")? {
        None => vec![run.run.stepsize],
        Some(v) => {
            let list: Result<Vec<StepsizeRule>> = v
                .split(',')
                .map(str::trim)
                .filter(|x| !x.is_empty())
                .map(|x| parse_stepsize(x, &s.origin))
                .collect();
            let list = list?;
            if list.is_empty() {
                return Err(Error::Config(format!("{}: empty stepsize sweep", s.origin)));
            }
            list
        }
    };
    let local_steps = s
        .take_list::<usize>("local_steps")?
        .unwrap_or_else(|| vec![run.run.local_steps]);
    Ok(SweepConfig {
        algorithms,
        stepsizes,
        local_steps,
    })
}
