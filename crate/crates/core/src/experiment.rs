//! Experiment documents and the scenario × strategy × seed sweep.
//!
//! [`ExperimentConfig`] is a flat key/value schema; every key has a default
//! taken from [`ExperimentConfig::reference`], and unknown keys are rejected
//! when deserializing.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    self, apply_scenario, generate_synthetic, Archive, CoOccurrence, ScenarioSpec, SplitFractions,
    Splits, SyntheticConfig,
};
use crate::engine::{run_many, ALConfig, IterationRecord, RunHistory};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, CurvePoint, CurveSummary};
use crate::model::TrainConfig;
use crate::nn::Stack;
use crate::query::Strategy;
use crate::ssl::{self, AugmentSpec, ByolConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// CSV archive to load instead of generating synthetic data.
    pub dataset: Option<PathBuf>,
    pub classes: usize,
    pub dim: usize,
    pub size: usize,
    pub priors: Vec<f64>,
    pub cooccurrence: Vec<CoOccurrence>,
    pub noise_std: f64,
    pub allow_empty_labels: bool,
    pub data_seed: u64,

    pub split_pool: f64,
    pub split_val: f64,
    pub split_test: f64,
    pub split_seed: u64,

    pub minority_classes: Vec<usize>,
    /// Samples removed per minority class, one scenario per entry.
    pub scenario_removals: Vec<usize>,
    pub exclusion_pairs: Vec<(usize, usize)>,
    pub scenario_seed: u64,

    pub initial_labeled: usize,
    pub budget_per_iteration: usize,
    pub total_budget: usize,
    pub strategies: Vec<Strategy>,
    pub m_factor: usize,
    pub hidden_sizes: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_epoch: usize,
    pub augment_noise: f64,
    pub freeze_encoder: bool,
    pub use_pretrained_encoder: bool,
    /// Reuse a saved encoder instead of pre-training on each scenario pool.
    pub encoder_checkpoint: Option<PathBuf>,

    pub ssl_epochs: usize,
    pub ssl_batch_size: usize,
    pub ssl_learning_rate: f64,
    pub ssl_tau: f64,
    pub ssl_noise_std: f64,
    pub ssl_mask_prob: f64,
    pub ssl_seed: u64,

    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::reference()
    }
}

impl ExperimentConfig {
    /// The imbalanced synthetic setup used for the directional comparison:
    /// five common classes, three rare ones, and a strongly coupled pair.
    pub fn reference() -> Self {
        let al = ALConfig::default();
        let byol = ByolConfig::default();
        Self {
            dataset: None,
            classes: 8,
            dim: 16,
            size: 3000,
            priors: vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.06, 0.06, 0.06],
            cooccurrence: vec![CoOccurrence {
                source: 0,
                target: 1,
                strength: 0.9,
            }],
            noise_std: 0.7,
            allow_empty_labels: false,
            data_seed: 7,
            split_pool: 0.5,
            split_val: 0.25,
            split_test: 0.25,
            split_seed: 11,
            minority_classes: vec![5, 6, 7],
            scenario_removals: vec![0, 20, 40],
            exclusion_pairs: vec![],
            scenario_seed: 13,
            initial_labeled: al.initial_labeled,
            budget_per_iteration: al.per_iteration_budget,
            total_budget: al.total_budget,
            strategies: vec![Strategy::Random, Strategy::MgeClustering],
            m_factor: al.m_factor,
            hidden_sizes: al.hidden_sizes,
            epochs: al.train.epochs,
            batch_size: al.train.batch_size,
            learning_rate: al.train.learning_rate,
            lr_decay_factor: al.train.lr_decay_factor,
            lr_decay_epoch: al.train.lr_decay_epoch,
            augment_noise: al.train.augment_noise_std,
            freeze_encoder: al.train.freeze_encoder,
            use_pretrained_encoder: true,
            encoder_checkpoint: None,
            ssl_epochs: byol.epochs,
            ssl_batch_size: byol.batch_size,
            ssl_learning_rate: byol.learning_rate,
            ssl_tau: byol.tau,
            ssl_noise_std: byol.augment.noise_std,
            ssl_mask_prob: byol.augment.mask_prob,
            ssl_seed: byol.seed,
            seeds: vec![0, 1, 2, 3, 4],
            output_dir: PathBuf::from("out"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.is_none() {
            if self.classes == 0 || self.dim == 0 || self.size == 0 {
                return Err(Error::Config(
                    "classes, dim and size must be at least 1".into(),
                ));
            }
            if self.priors.len() != self.classes {
                return Err(Error::Config(format!(
                    "priors has {} entries but classes = {}",
                    self.priors.len(),
                    self.classes
                )));
            }
            self.synthetic().validate()?;
        }
        if self.strategies.is_empty() {
            return Err(Error::Config(
                "strategies must list at least one strategy".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        if self.scenario_removals.is_empty() {
            return Err(Error::Config(
                "scenario_removals must list at least one entry".into(),
            ));
        }
        if self.scenario_removals.iter().any(|&r| r > 0) && self.minority_classes.is_empty() {
            return Err(Error::Config(
                "scenario_removals asks for removal but minority_classes is empty".into(),
            ));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::Config(
                "hidden_sizes entries must be positive".into(),
            ));
        }
        self.al_config(self.strategies[0]).validate()?;
        self.byol_config().validate()
    }

    pub fn synthetic(&self) -> SyntheticConfig {
        SyntheticConfig {
            num_classes: self.classes,
            dim: self.dim,
            size: self.size,
            class_priors: self.priors.clone(),
            cooccurrence: self.cooccurrence.clone(),
            noise_std: self.noise_std,
            allow_empty_labels: self.allow_empty_labels,
            seed: self.data_seed,
        }
    }

    pub fn fractions(&self) -> SplitFractions {
        SplitFractions::new(self.split_pool, self.split_val, self.split_test)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            lr_decay_factor: self.lr_decay_factor,
            lr_decay_epoch: self.lr_decay_epoch,
            seed: 0,
            augment_noise_std: self.augment_noise,
            freeze_encoder: self.freeze_encoder,
        }
    }

    /// Seed is left at 0; [`run_many`] substitutes each listed seed.
    pub fn al_config(&self, strategy: Strategy) -> ALConfig {
        ALConfig {
            initial_labeled: self.initial_labeled,
            per_iteration_budget: self.budget_per_iteration,
            total_budget: self.total_budget,
            strategy,
            m_factor: self.m_factor,
            hidden_sizes: self.hidden_sizes.clone(),
            train: self.train_config(),
            use_pretrained_encoder: self.use_pretrained_encoder,
            seed: 0,
        }
    }

    pub fn byol_config(&self) -> ByolConfig {
        ByolConfig {
            epochs: self.ssl_epochs,
            batch_size: self.ssl_batch_size,
            learning_rate: self.ssl_learning_rate,
            tau: self.ssl_tau,
            hidden_sizes: self.hidden_sizes.clone(),
            augment: AugmentSpec {
                noise_std: self.ssl_noise_std,
                mask_prob: self.ssl_mask_prob,
            },
            seed: self.ssl_seed,
        }
    }

    /// Removal spec for one scenario, or `None` when nothing is removed.
    pub fn scenario_spec(&self, removal: usize) -> Option<ScenarioSpec> {
        (removal > 0).then(|| ScenarioSpec {
            minority_classes: self.minority_classes.clone(),
            remove_per_class: removal,
            exclusion_pairs: self.exclusion_pairs.clone(),
            seed: self.scenario_seed,
        })
    }

    pub fn load_archive(&self) -> Result<Archive> {
        match &self.dataset {
            Some(path) => dataset::load_csv(path),
            None => generate_synthetic(&self.synthetic()),
        }
    }

    pub fn splits(&self) -> Result<Splits> {
        dataset::split(&self.load_archive()?, self.fractions(), self.split_seed)
    }
}

pub fn scenario_name(index: usize) -> String {
    format!("scenario{}", index + 1)
}

/// One pool variant with its encoder.
#[derive(Debug, Clone)]
pub struct ScenarioPool {
    pub name: String,
    pub removal: usize,
    pub pool: Archive,
    pub encoder: Option<Stack>,
    /// Empty when the encoder was supplied rather than pre-trained here.
    pub pretrain_losses: Vec<f64>,
}

/// Applies every configured removal to `splits.pool` and, when the runs use a
/// pretrained encoder, pre-trains one per resulting pool unless `encoder` is given.
pub fn scenario_pools(
    config: &ExperimentConfig,
    splits: &Splits,
    encoder: Option<&Stack>,
) -> Result<Vec<ScenarioPool>> {
    config
        .scenario_removals
        .iter()
        .enumerate()
        .map(|(i, &removal)| {
            let pool = match config.scenario_spec(removal) {
                Some(spec) => apply_scenario(&splits.pool, &spec)?,
                None => splits.pool.clone(),
            };
            let (encoder, pretrain_losses) = match (config.use_pretrained_encoder, encoder) {
                (false, _) => (None, Vec::new()),
                (true, Some(e)) => (Some(e.clone()), Vec::new()),
                (true, None) => {
                    let out = ssl::pretrain(&pool, &config.byol_config())?;
                    (Some(out.encoder), out.epoch_losses)
                }
            };
            Ok(ScenarioPool {
                name: scenario_name(i),
                removal,
                pool,
                encoder,
                pretrain_losses,
            })
        })
        .collect()
}

/// All runs of one strategy in one scenario, ordered by seed as listed.
#[derive(Debug, Clone)]
pub struct StrategyRuns {
    pub strategy: Strategy,
    pub runs: Vec<RunHistory>,
    pub summary: CurveSummary,
}

impl StrategyRuns {
    pub fn final_macro_f1(&self) -> Vec<f64> {
        self.runs
            .iter()
            .map(|r| r.final_record().macro_f1)
            .collect()
    }

    pub fn mean_final_macro_f1(&self) -> f64 {
        let v = self.final_macro_f1();
        v.iter().sum::<f64>() / v.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioResult {
    pub name: String,
    pub removal: usize,
    pub pool_size: usize,
    pub strategies: Vec<StrategyRuns>,
}

impl ScenarioResult {
    pub fn strategy(&self, strategy: Strategy) -> Option<&StrategyRuns> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }
}

/// Runs every strategy on one pool for every seed, paired by seed.
///
/// All runs execute even if some fail; the first failure is then returned
/// with its strategy and seed attached.
pub fn run_strategies(
    config: &ExperimentConfig,
    pool: &Archive,
    val: &Archive,
    test: &Archive,
    encoder: Option<&Stack>,
    jobs: usize,
) -> Result<Vec<StrategyRuns>> {
    let configs: Vec<ALConfig> = config
        .strategies
        .iter()
        .map(|&s| config.al_config(s))
        .collect();
    let outcomes = run_many(pool, val, test, &configs, &config.seeds, encoder, jobs);
    let mut grouped: Vec<Vec<RunHistory>> = vec![Vec::new(); configs.len()];
    for outcome in outcomes {
        let run = outcome.result.map_err(|e| Error::InRun {
            label: format!(
                "{}/seed {}",
                configs[outcome.config_index].strategy, outcome.seed
            ),
            source: Box::new(e),
        })?;
        grouped[outcome.config_index].push(run);
    }
    config
        .strategies
        .iter()
        .zip(grouped)
        .map(|(&strategy, runs)| {
            let curves: Vec<_> = runs.iter().map(RunHistory::curve).collect();
            Ok(StrategyRuns {
                strategy,
                summary: aggregate(&curves)?,
                runs,
            })
        })
        .collect()
}

/// The full scenario × strategy × seed sweep.
pub fn compare(
    config: &ExperimentConfig,
    splits: &Splits,
    encoder: Option<&Stack>,
    jobs: usize,
) -> Result<Vec<ScenarioResult>> {
    config.validate()?;
    scenario_pools(config, splits, encoder)?
        .into_iter()
        .map(|sp| {
            let strategies = run_strategies(
                config,
                &sp.pool,
                &splits.val,
                &splits.test,
                sp.encoder.as_ref(),
                jobs,
            )
            .map_err(|e| Error::InRun {
                label: sp.name.clone(),
                source: Box::new(e),
            })?;
            Ok(ScenarioResult {
                name: sp.name,
                removal: sp.removal,
                pool_size: sp.pool.len(),
                strategies,
            })
        })
        .collect()
}

/// One line of a run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogLine {
    pub scenario: String,
    pub strategy: String,
    pub seed: u64,
    #[serde(flatten)]
    pub record: IterationRecord,
}

pub fn log_lines(scenario: &str, run: &RunHistory) -> Vec<RunLogLine> {
    run.records
        .iter()
        .map(|record| RunLogLine {
            scenario: scenario.to_string(),
            strategy: run.strategy.clone(),
            seed: run.seed,
            record: record.clone(),
        })
        .collect()
}

/// A row of the plot-ready curve table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub strategy: String,
    pub scenario: String,
    pub labeled_count: usize,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Two rows (micro and macro F1) per checkpoint.
pub fn curve_rows(strategy: &str, scenario: &str, summary: &CurveSummary) -> Vec<CurveRow> {
    summary
        .checkpoints
        .iter()
        .flat_map(|c| {
            [
                ("micro_f1", c.micro_mean, c.micro_std),
                ("macro_f1", c.macro_mean, c.macro_std),
            ]
            .map(|(metric, mean, std)| CurveRow {
                strategy: strategy.to_string(),
                scenario: scenario.to_string(),
                labeled_count: c.labeled_count,
                metric: metric.to_string(),
                mean,
                std,
            })
        })
        .collect()
}

/// Mean-over-iterations and final macro F1 of one strategy in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub strategy: String,
    pub runs: usize,
    pub mean_macro_over_iterations: f64,
    pub final_macro_mean: f64,
}

/// Plot-ready tables, sorted by scenario then strategy.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub curves: Vec<CurveRow>,
    pub scenarios: Vec<ScenarioRow>,
}

impl Report {
    fn push(&mut self, scenario: &str, strategy: &str, summary: &CurveSummary, finals: &[f64]) {
        self.curves.extend(curve_rows(strategy, scenario, summary));
        self.scenarios.push(ScenarioRow {
            scenario: scenario.to_string(),
            strategy: strategy.to_string(),
            runs: summary.runs,
            mean_macro_over_iterations: summary.mean_macro_over_iterations,
            final_macro_mean: finals.iter().sum::<f64>() / finals.len() as f64,
        });
    }

    fn sort(&mut self) {
        self.curves.sort_by(|a, b| {
            (&a.scenario, &a.strategy, a.labeled_count, &a.metric).cmp(&(
                &b.scenario,
                &b.strategy,
                b.labeled_count,
                &b.metric,
            ))
        });
        self.scenarios
            .sort_by(|a, b| (&a.scenario, &a.strategy).cmp(&(&b.scenario, &b.strategy)));
    }

    pub fn from_results(results: &[ScenarioResult]) -> Self {
        let mut report = Report::default();
        for r in results {
            for s in &r.strategies {
                report.push(&r.name, s.strategy.tag(), &s.summary, &s.final_macro_f1());
            }
        }
        report.sort();
        report
    }

    /// Rebuilds the tables from run-log lines, grouping by scenario, strategy and seed.
    pub fn from_logs(lines: &[RunLogLine]) -> Result<Self> {
        let mut groups: BTreeMap<(&str, &str), BTreeMap<u64, Vec<&IterationRecord>>> =
            BTreeMap::new();
        for line in lines {
            groups
                .entry((&line.scenario, &line.strategy))
                .or_default()
                .entry(line.seed)
                .or_default()
                .push(&line.record);
        }
        let mut report = Report::default();
        for ((scenario, strategy), runs) in groups {
            let mut curves = Vec::with_capacity(runs.len());
            let mut finals = Vec::with_capacity(runs.len());
            for (seed, mut records) in runs {
                records.sort_by_key(|r| r.iteration);
                if records.windows(2).any(|w| w[0].iteration == w[1].iteration) {
                    return Err(Error::Aggregation(format!(
                        "{scenario}/{strategy}/seed {seed}: duplicate iteration records"
                    )));
                }
                curves.push(
                    records
                        .iter()
                        .map(|r| CurvePoint {
                            labeled_count: r.labeled_count,
                            micro_f1: r.micro_f1,
                            macro_f1: r.macro_f1,
                        })
                        .collect(),
                );
                finals.push(records.last().map_or(0.0, |r| r.macro_f1));
            }
            let summary = aggregate(&curves).map_err(|e| Error::InRun {
                label: format!("{scenario}/{strategy}"),
                source: Box::new(e),
            })?;
            report.push(scenario, strategy, &summary, &finals);
        }
        report.sort();
        Ok(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            classes: 3,
            dim: 4,
            size: 240,
            priors: vec![0.5, 0.4, 0.15],
            cooccurrence: vec![],
            minority_classes: vec![2],
            scenario_removals: vec![0, 5],
            initial_labeled: 10,
            budget_per_iteration: 5,
            total_budget: 10,
            hidden_sizes: vec![6],
            epochs: 4,
            lr_decay_epoch: 3,
            ssl_epochs: 2,
            seeds: vec![0, 1],
            ..ExperimentConfig::reference()
        }
    }

    #[test]
    fn reference_validates() {
        ExperimentConfig::reference().validate().unwrap();
    }

    #[test]
    fn rejects_empty_strategy_list() {
        let cfg = ExperimentConfig {
            strategies: vec![],
            ..small()
        };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = serde_json::from_str::<ExperimentConfig>(r#"{"clases": 3}"#).unwrap_err();
        assert!(err.to_string().contains("clases"));
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"classes": 3}"#).unwrap();
        assert_eq!(cfg.classes, 3);
        assert_eq!(cfg.dim, 16);
    }

    #[test]
    fn sweep_shapes() {
        let cfg = small();
        let splits = cfg.splits().unwrap();
        let results = compare(&cfg, &splits, None, 2).unwrap();
        assert_eq!(results.len(), 2);
        assert_eq!(results[0].pool_size, splits.pool.len());
        assert!(results[1].pool_size <= splits.pool.len() - 5);
        for r in &results {
            assert_eq!(r.strategies.len(), 2);
            for s in &r.strategies {
                assert_eq!(s.runs.len(), 2);
                assert_eq!(s.summary.checkpoints.len(), 3);
                let rows = curve_rows(s.strategy.tag(), &r.name, &s.summary);
                assert_eq!(rows.len(), 6);
            }
        }
        let report = Report::from_results(&results);
        assert_eq!(report.scenarios.len(), 4);
        assert_eq!(report.curves.len(), 24);
    }

    #[test]
    fn paired_runs_share_initial_sets() {
        let cfg = small();
        let splits = cfg.splits().unwrap();
        let results = compare(&cfg, &splits, None, 1).unwrap();
        let s = &results[0].strategies;
        for (a, b) in s[0].runs.iter().zip(&s[1].runs) {
            assert_eq!(a.records[0].selected_ids, b.records[0].selected_ids);
        }
        assert_ne!(
            s[0].runs[0].records[0].selected_ids,
            s[0].runs[1].records[0].selected_ids
        );
    }

    #[test]
    fn identical_strategies_give_identical_curves() {
        let cfg = ExperimentConfig {
            strategies: vec![Strategy::MgeClustering, Strategy::MgeClustering],
            scenario_removals: vec![0],
            ..small()
        };
        let splits = cfg.splits().unwrap();
        let results = compare(&cfg, &splits, None, 2).unwrap();
        let s = &results[0].strategies;
        assert_eq!(s[0].summary, s[1].summary);
    }

    #[test]
    fn log_lines_flatten_records() {
        let cfg = ExperimentConfig {
            scenario_removals: vec![0],
            strategies: vec![Strategy::Random],
            seeds: vec![3],
            ..small()
        };
        let splits = cfg.splits().unwrap();
        let results = compare(&cfg, &splits, None, 1).unwrap();
        let run = &results[0].strategies[0].runs[0];
        let lines = log_lines("scenario1", run);
        assert_eq!(lines.len(), run.records.len());
        let json = serde_json::to_string(&lines[0]).unwrap();
        assert!(json.contains("\"labeled_count\":10"));
        let back: RunLogLine = serde_json::from_str(&json).unwrap();
        assert_eq!(back, lines[0]);
    }

    #[test]
    fn report_from_logs_matches_direct_report() {
        let cfg = small();
        let splits = cfg.splits().unwrap();
        let results = compare(&cfg, &splits, None, 2).unwrap();
        let mut lines: Vec<RunLogLine> = results
            .iter()
            .flat_map(|r| {
                r.strategies
                    .iter()
                    .flat_map(|s| s.runs.iter().flat_map(|run| log_lines(&r.name, run)))
            })
            .collect();
        lines.reverse();
        assert_eq!(
            Report::from_logs(&lines).unwrap(),
            Report::from_results(&results)
        );
        lines.push(lines[0].clone());
        assert!(Report::from_logs(&lines).is_err());
    }
}
