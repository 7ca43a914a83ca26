//! The budgeted active-learning protocol.
//!
//! A run draws `M` initial samples, then alternates fine-tuning, test-set
//! evaluation, querying `b` samples and revealing their labels until `B`
//! labels have been acquired. Each fine-tuning round starts from the previous
//! round's parameters.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Archive, Sample};
use crate::error::{check_dim, Error, Result};
use crate::metrics::{evaluate, CurvePoint};
use crate::model::{train, ModelParams, TrainConfig};
use crate::nn::Stack;
use crate::query::{BuiltinStrategy, QueryStrategy, Strategy};
use crate::rng;
use crate::ssl;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ALConfig {
    pub initial_labeled: usize,
    pub per_iteration_budget: usize,
    pub total_budget: usize,
    pub strategy: Strategy,
    /// Candidate pool size for clustering is `m_factor * b`.
    pub m_factor: usize,
    pub hidden_sizes: Vec<usize>,
    pub train: TrainConfig,
    pub use_pretrained_encoder: bool,
    pub seed: u64,
}

impl Default for ALConfig {
    fn default() -> Self {
        Self {
            initial_labeled: 40,
            per_iteration_budget: 20,
            total_budget: 200,
            strategy: Strategy::MgeClustering,
            m_factor: 10,
            hidden_sizes: vec![32],
            train: TrainConfig::default(),
            use_pretrained_encoder: false,
            seed: 0,
        }
    }
}

impl ALConfig {
    pub fn validate(&self) -> Result<()> {
        if self.initial_labeled == 0 {
            return Err(Error::Config("initial_labeled must be at least 1".into()));
        }
        if self.per_iteration_budget == 0 {
            return Err(Error::Config(
                "per_iteration_budget must be at least 1".into(),
            ));
        }
        if self.total_budget < self.per_iteration_budget {
            return Err(Error::Config(format!(
                "total_budget {} is smaller than per_iteration_budget {}",
                self.total_budget, self.per_iteration_budget
            )));
        }
        if self.m_factor == 0 {
            return Err(Error::Config("m_factor must be at least 1".into()));
        }
        self.train.validate()
    }

    /// Number of query rounds; the last one takes the remainder when `b` does not divide `B`.
    pub fn iterations(&self) -> usize {
        self.total_budget.div_ceil(self.per_iteration_budget)
    }
}

/// Tracks which pool samples have had their labels revealed.
pub struct LabelingPool<'a> {
    samples: &'a [Sample],
    position: HashMap<usize, usize>,
    labeled: Vec<bool>,
    /// Pool positions in the order they were labeled.
    order: Vec<usize>,
}

impl<'a> LabelingPool<'a> {
    pub fn new(pool: &'a Archive) -> Self {
        let samples = pool.samples();
        Self {
            samples,
            position: samples.iter().enumerate().map(|(i, s)| (s.id, i)).collect(),
            labeled: vec![false; samples.len()],
            order: Vec::new(),
        }
    }

    /// Reveals ground truth for `ids`. Fails without side effects on unknown,
    /// repeated or already-labeled ids.
    pub fn oracle_label(&mut self, ids: &[usize]) -> Result<Vec<&'a Sample>> {
        let mut positions = Vec::with_capacity(ids.len());
        for &id in ids {
            let pos = *self
                .position
                .get(&id)
                .ok_or_else(|| Error::Protocol(format!("sample {id} is not in the pool")))?;
            if self.labeled[pos] || positions.contains(&pos) {
                return Err(Error::Protocol(format!("sample {id} is already labeled")));
            }
            positions.push(pos);
        }
        for &pos in &positions {
            self.labeled[pos] = true;
            self.order.push(pos);
        }
        Ok(positions.iter().map(|&p| &self.samples[p]).collect())
    }

    pub fn labeled(&self) -> Vec<&'a Sample> {
        self.order.iter().map(|&p| &self.samples[p]).collect()
    }

    pub fn unlabeled(&self) -> Vec<&'a Sample> {
        self.samples
            .iter()
            .zip(&self.labeled)
            .filter(|(_, &l)| !l)
            .map(|(s, _)| s)
            .collect()
    }

    pub fn labeled_count(&self) -> usize {
        self.order.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub labeled_count: usize,
    /// Ids labeled in this iteration; for iteration 0, the initial set.
    pub selected_ids: Vec<usize>,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub strategy: String,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub final_params: ModelParams,
}

impl RunHistory {
    pub fn curve(&self) -> Vec<CurvePoint> {
        self.records
            .iter()
            .map(|r| CurvePoint {
                labeled_count: r.labeled_count,
                micro_f1: r.micro_f1,
                macro_f1: r.macro_f1,
            })
            .collect()
    }

    pub fn final_record(&self) -> &IterationRecord {
        self.records
            .last()
            .expect("a run records at least one evaluation")
    }
}

/// Hooks into a run, for logging and protocol checks.
pub trait RunObserver {
    fn on_partition(&mut self, _iteration: usize, _labeled: &[&Sample], _unlabeled: &[&Sample]) {}

    fn on_fine_tune(&mut self, _iteration: usize, _before: &ModelParams, _after: &ModelParams) {}
}

impl RunObserver for () {}

/// Seed streams used within a run.
mod streams {
    pub const INITIAL_SET: u64 = 1;
    pub const HEAD_INIT: u64 = 2;
    pub const QUERY: u64 = 3;
    pub const TRAIN_BASE: u64 = 100;
}

/// Runs the protocol with one of the built-in strategies.
///
/// `_val` is accepted for API symmetry with the data splits; model selection on
/// it is left to the caller.
pub fn run_al(
    pool: &Archive,
    _val: &Archive,
    test: &Archive,
    config: &ALConfig,
    pretrained: Option<&Stack>,
) -> Result<RunHistory> {
    let strategy = BuiltinStrategy {
        strategy: config.strategy,
        m_factor: config.m_factor,
    };
    run_al_with(pool, test, config, pretrained, &strategy, &mut ())
}

/// Runs the protocol with an arbitrary selection rule and observer.
pub fn run_al_with(
    pool: &Archive,
    test: &Archive,
    config: &ALConfig,
    pretrained: Option<&Stack>,
    strategy: &dyn QueryStrategy,
    observer: &mut dyn RunObserver,
) -> Result<RunHistory> {
    config.validate()?;
    let needed = config.initial_labeled + config.total_budget;
    if pool.len() < needed {
        return Err(Error::Config(format!(
            "pool holds {} samples but M + B = {needed}",
            pool.len()
        )));
    }
    check_dim(pool.dim(), test.dim())?;
    check_dim(pool.num_classes(), test.num_classes())?;

    let head_seed = rng::mix(config.seed, streams::HEAD_INIT);
    let mut params = match (config.use_pretrained_encoder, pretrained) {
        (true, Some(encoder)) => ssl::transfer(encoder, pool.dim(), pool.num_classes(), head_seed)?,
        (true, None) => {
            return Err(Error::Config(
                "use_pretrained_encoder is set but no pretrained encoder was supplied".into(),
            ))
        }
        (false, _) => ModelParams::init(
            pool.dim(),
            &config.hidden_sizes,
            pool.num_classes(),
            head_seed,
        )?,
    };

    let mut labeling = LabelingPool::new(pool);
    let mut initial = pool.ids();
    let mut init_rng = rng::stream(config.seed, streams::INITIAL_SET);
    rng::partial_shuffle(&mut init_rng, &mut initial, config.initial_labeled);
    initial.truncate(config.initial_labeled);
    labeling.oracle_label(&initial)?;

    let mut query_rng = rng::stream(config.seed, streams::QUERY);
    let mut records = Vec::with_capacity(config.iterations() + 1);
    let mut selected = initial;
    let mut acquired = 0;
    let mut iteration = 0;
    loop {
        let labeled = labeling.labeled();
        let unlabeled = labeling.unlabeled();
        observer.on_partition(iteration, &labeled, &unlabeled);

        let train_config = TrainConfig {
            seed: rng::mix(config.seed, streams::TRAIN_BASE + iteration as u64),
            ..config.train.clone()
        };
        let tuned = train(&params, &labeled, &train_config).map_err(|e| Error::AtIteration {
            iteration,
            source: Box::new(e),
        })?;
        observer.on_fine_tune(iteration, &params, &tuned);
        params = tuned;

        let eval = evaluate(&params, test.samples())?;
        records.push(IterationRecord {
            iteration,
            labeled_count: labeling.labeled_count(),
            selected_ids: std::mem::take(&mut selected),
            micro_f1: eval.micro_f1,
            macro_f1: eval.macro_f1,
            per_class_f1: eval.per_class_f1,
        });

        if acquired >= config.total_budget || unlabeled.is_empty() {
            break;
        }
        let b = config
            .per_iteration_budget
            .min(config.total_budget - acquired);
        let query = strategy
            .select(&params, &unlabeled, b, &mut query_rng)
            .map_err(|e| Error::AtIteration {
                iteration,
                source: Box::new(e),
            })?;
        if query.selected_ids.len() != b.min(unlabeled.len()) {
            return Err(Error::Protocol(format!(
                "strategy `{}` returned {} ids, expected {}",
                strategy.tag(),
                query.selected_ids.len(),
                b.min(unlabeled.len())
            )));
        }
        labeling.oracle_label(&query.selected_ids)?;
        acquired += query.selected_ids.len();
        selected = query.selected_ids;
        iteration += 1;
    }

    Ok(RunHistory {
        strategy: strategy.tag().to_string(),
        seed: config.seed,
        records,
        final_params: params,
    })
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config_index: usize,
    pub seed: u64,
    pub result: Result<RunHistory>,
}

/// Every `(config, seed)` combination, run independently on up to `jobs`
/// threads (`0` uses rayon's global pool).
///
/// Each run uses the listed seed in place of its config's seed. Failures are
/// reported per run. Outcomes are ordered by config, then seed.
pub fn run_many(
    pool: &Archive,
    val: &Archive,
    test: &Archive,
    configs: &[ALConfig],
    seeds: &[u64],
    pretrained: Option<&Stack>,
    jobs: usize,
) -> Vec<RunOutcome> {
    let tasks: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let work = || {
        tasks
            .par_iter()
            .map(|&(config_index, seed)| {
                let config = ALConfig {
                    seed,
                    ..configs[config_index].clone()
                };
                RunOutcome {
                    config_index,
                    seed,
                    result: run_al(pool, val, test, &config, pretrained),
                }
            })
            .collect()
    };
    if jobs == 0 {
        return work();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(threads) => threads.install(work),
        Err(_) => work(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, split, SplitFractions, SyntheticConfig};

    fn splits() -> crate::dataset::Splits {
        let archive = generate_synthetic(&SyntheticConfig {
            num_classes: 3,
            dim: 4,
            size: 200,
            class_priors: vec![0.5, 0.3, 0.1],
            cooccurrence: vec![],
            noise_std: 0.3,
            allow_empty_labels: false,
            seed: 1,
        })
        .unwrap();
        split(&archive, SplitFractions::new(0.5, 0.25, 0.25), 2).unwrap()
    }

    fn quick(strategy: Strategy) -> ALConfig {
        ALConfig {
            initial_labeled: 10,
            per_iteration_budget: 5,
            total_budget: 15,
            strategy,
            hidden_sizes: vec![8],
            train: TrainConfig {
                epochs: 5,
                lr_decay_epoch: 4,
                ..TrainConfig::default()
            },
            ..ALConfig::default()
        }
    }

    #[test]
    fn oracle_rejects_double_and_unknown_labels() {
        let s = splits();
        let mut pool = LabelingPool::new(&s.pool);
        let ids = s.pool.ids();
        assert!(pool.oracle_label(&[]).unwrap().is_empty());
        assert_eq!(pool.labeled_count(), 0);
        let got = pool.oracle_label(&ids[..2]).unwrap();
        assert_eq!(got[0].labels, s.pool.samples()[0].labels);
        assert!(matches!(
            pool.oracle_label(&ids[1..3]),
            Err(Error::Protocol(_))
        ));
        assert_eq!(pool.labeled_count(), 2);
        assert!(matches!(
            pool.oracle_label(&[usize::MAX]),
            Err(Error::Protocol(_))
        ));
        assert!(matches!(
            pool.oracle_label(&[ids[5], ids[5]]),
            Err(Error::Protocol(_))
        ));
    }

    #[test]
    fn exhausting_the_pool_in_one_iteration() {
        let s = splits();
        let cfg = ALConfig {
            initial_labeled: 10,
            per_iteration_budget: s.pool.len() - 10,
            total_budget: s.pool.len() - 10,
            ..quick(Strategy::Random)
        };
        let h = run_al(&s.pool, &s.val, &s.test, &cfg, None).unwrap();
        assert_eq!(h.records.len(), 2);
        assert_eq!(h.final_record().labeled_count, s.pool.len());
    }

    #[test]
    fn budget_remainder_goes_to_last_iteration() {
        let s = splits();
        let cfg = ALConfig {
            per_iteration_budget: 4,
            total_budget: 10,
            ..quick(Strategy::Mge)
        };
        let h = run_al(&s.pool, &s.val, &s.test, &cfg, None).unwrap();
        let counts: Vec<usize> = h.records.iter().map(|r| r.labeled_count).collect();
        assert_eq!(counts, vec![10, 14, 18, 20]);
    }

    #[test]
    fn oversized_budget_is_rejected() {
        let s = splits();
        let cfg = ALConfig {
            total_budget: s.pool.len(),
            ..quick(Strategy::Random)
        };
        assert!(matches!(
            run_al(&s.pool, &s.val, &s.test, &cfg, None),
            Err(Error::Config(_))
        ));
        let cfg = ALConfig {
            use_pretrained_encoder: true,
            ..quick(Strategy::Random)
        };
        assert!(matches!(
            run_al(&s.pool, &s.val, &s.test, &cfg, None),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn run_many_is_ordered_and_deterministic() {
        let s = splits();
        let configs = [quick(Strategy::Random), quick(Strategy::MgeClustering)];
        let a = run_many(&s.pool, &s.val, &s.test, &configs, &[1, 2], None, 2);
        let keys: Vec<(usize, u64)> = a.iter().map(|o| (o.config_index, o.seed)).collect();
        assert_eq!(keys, vec![(0, 1), (0, 2), (1, 1), (1, 2)]);
        let b = run_many(&s.pool, &s.val, &s.test, &configs, &[1, 2], None, 1);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.result.as_ref().unwrap(), y.result.as_ref().unwrap());
        }
        // Same seed, different strategy: same initial set.
        let r0 = a[0].result.as_ref().unwrap();
        let r1 = a[2].result.as_ref().unwrap();
        assert_eq!(r0.records[0].selected_ids, r1.records[0].selected_ids);
        assert_eq!(r0.records[0], r1.records[0]);
    }

    #[test]
    fn run_many_collects_failures_per_run() {
        let s = splits();
        let bad = ALConfig {
            total_budget: 10_000,
            ..quick(Strategy::Random)
        };
        let out = run_many(
            &s.pool,
            &s.val,
            &s.test,
            &[quick(Strategy::Random), bad],
            &[3],
            None,
            2,
        );
        assert!(out[0].result.is_ok());
        assert!(out[1].result.is_err());
    }
}
