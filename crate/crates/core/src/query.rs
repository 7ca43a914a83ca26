//! Sample-selection strategies: random, gradient-magnitude (MGE) ranking and
//! MGE followed by k-means++ diversity clustering.
//!
//! An unlabeled sample's uncertainty is the norm of the last-layer BCE gradient
//! computed against its own thresholded predictions. No ground-truth label is
//! read anywhere in this module.

use std::cmp::Ordering;
use std::fmt;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster;
use crate::dataset::{MultiLabelVector, Sample};
use crate::error::Result;
use crate::model::{head_gradient, ModelParams};
use crate::rng;

pub use crate::model::GradientEmbedding;

pub const PSEUDO_LABEL_THRESHOLD: f64 = 0.5;

/// `1` where `p >= threshold`.
pub fn pseudo_label(probs: &[f64], threshold: f64) -> MultiLabelVector {
    MultiLabelVector::new(probs.iter().map(|&p| p >= threshold).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Random,
    Mge,
    MgeClustering,
}

impl Strategy {
    pub fn tag(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Mge => "mge",
            Strategy::MgeClustering => "mge_clustering",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(Strategy::Random),
            "mge" => Ok(Strategy::Mge),
            "mge_clustering" => Ok(Strategy::MgeClustering),
            other => Err(format!(
                "unknown strategy `{other}` (expected random, mge or mge_clustering)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuerySelection {
    pub selected_ids: Vec<usize>,
    /// Uncertainty score of each selected id; zero for random picks.
    pub scores: Vec<f64>,
    pub strategy_tag: String,
}

impl QuerySelection {
    fn empty(tag: &str) -> Self {
        Self {
            selected_ids: Vec::new(),
            scores: Vec::new(),
            strategy_tag: tag.into(),
        }
    }
}

/// One scored candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Scored {
    pub id: usize,
    pub magnitude: f64,
    pub penultimate: Vec<f64>,
}

/// Gradient magnitude under pseudo-labels for every sample, in input order.
pub fn mge_scores(params: &ModelParams, unlabeled: &[&Sample]) -> Result<Vec<Scored>> {
    unlabeled
        .par_iter()
        .map(|s| {
            let fwd = params.forward(&s.features)?;
            let y_hat = pseudo_label(&fwd.probs, PSEUDO_LABEL_THRESHOLD);
            let g = head_gradient(&fwd, &y_hat);
            Ok(Scored {
                id: s.id,
                magnitude: g.magnitude,
                penultimate: fwd.penultimate,
            })
        })
        .collect()
}

/// Descending magnitude, ties by ascending id.
fn by_rank(a: &Scored, b: &Scored) -> Ordering {
    b.magnitude.total_cmp(&a.magnitude).then(a.id.cmp(&b.id))
}

fn ranked(params: &ModelParams, unlabeled: &[&Sample]) -> Result<Vec<Scored>> {
    let mut scored = mge_scores(params, unlabeled)?;
    scored.sort_by(by_rank);
    Ok(scored)
}

fn selection(tag: &str, picks: impl IntoIterator<Item = (usize, f64)>) -> QuerySelection {
    let (selected_ids, scores) = picks.into_iter().unzip();
    QuerySelection {
        selected_ids,
        scores,
        strategy_tag: tag.into(),
    }
}

/// Uniform sample of `min(b, |unlabeled|)` ids without replacement.
pub fn random_query<R: Rng + ?Sized>(
    unlabeled: &[&Sample],
    b: usize,
    rng: &mut R,
) -> QuerySelection {
    let take = b.min(unlabeled.len());
    let mut ids: Vec<usize> = unlabeled.iter().map(|s| s.id).collect();
    rng::partial_shuffle(rng, &mut ids, take);
    selection(
        Strategy::Random.tag(),
        ids.into_iter().take(take).map(|id| (id, 0.0)),
    )
}

/// Top-`b` by gradient magnitude.
pub fn mge_query(params: &ModelParams, unlabeled: &[&Sample], b: usize) -> Result<QuerySelection> {
    if unlabeled.is_empty() {
        return Ok(QuerySelection::empty(Strategy::Mge.tag()));
    }
    let scored = ranked(params, unlabeled)?;
    Ok(selection(
        Strategy::Mge.tag(),
        scored.iter().take(b).map(|s| (s.id, s.magnitude)),
    ))
}

/// The `m` most uncertain samples are clustered into `b` groups on their
/// penultimate features (best of [`cluster::DEFAULT_RESTARTS`] k-means++
/// rounds); each group contributes its most uncertain member.
///
/// If fewer than `b` clusters form (duplicate features), the remaining slots
/// go to the best-ranked unselected candidates. Selected ids are listed in
/// cluster order, followed by any fill-ins.
pub fn mge_clustering_query<R: Rng + ?Sized>(
    params: &ModelParams,
    unlabeled: &[&Sample],
    b: usize,
    m: usize,
    rng: &mut R,
) -> Result<QuerySelection> {
    let tag = Strategy::MgeClustering.tag();
    if unlabeled.is_empty() || b == 0 {
        return Ok(QuerySelection::empty(tag));
    }
    let mut candidates = ranked(params, unlabeled)?;
    candidates.truncate(m.min(unlabeled.len()));
    if candidates.len() <= b {
        return Ok(selection(
            tag,
            candidates.iter().map(|s| (s.id, s.magnitude)),
        ));
    }

    let features: Vec<Vec<f64>> = candidates.iter().map(|s| s.penultimate.clone()).collect();
    let clustering = cluster::cluster_best_of(
        &features,
        b,
        rng,
        cluster::DEFAULT_RESTARTS,
        cluster::DEFAULT_MAX_ITER,
        cluster::DEFAULT_TOL,
    )?;

    let mut taken = vec![false; candidates.len()];
    let mut picks = Vec::with_capacity(b);
    for c in 0..clustering.k() {
        // Candidates are in rank order, so the first member is the most uncertain.
        if let Some(i) = clustering.members(c).next() {
            taken[i] = true;
            picks.push((candidates[i].id, candidates[i].magnitude));
        }
    }
    for (i, s) in candidates.iter().enumerate() {
        if picks.len() >= b {
            break;
        }
        if !taken[i] {
            taken[i] = true;
            picks.push((s.id, s.magnitude));
        }
    }
    Ok(selection(tag, picks))
}

/// A selection rule the engine calls once per iteration.
pub trait QueryStrategy: Sync {
    fn tag(&self) -> &str;

    fn select(
        &self,
        params: &ModelParams,
        unlabeled: &[&Sample],
        b: usize,
        rng: &mut rng::SeededRng,
    ) -> Result<QuerySelection>;
}

/// The built-in strategies, with `m = m_factor * b` for the clustering variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuiltinStrategy {
    pub strategy: Strategy,
    pub m_factor: usize,
}

impl QueryStrategy for BuiltinStrategy {
    fn tag(&self) -> &str {
        self.strategy.tag()
    }

    fn select(
        &self,
        params: &ModelParams,
        unlabeled: &[&Sample],
        b: usize,
        rng: &mut rng::SeededRng,
    ) -> Result<QuerySelection> {
        match self.strategy {
            Strategy::Random => Ok(random_query(unlabeled, b, rng)),
            Strategy::Mge => mge_query(params, unlabeled, b),
            Strategy::MgeClustering => {
                mge_clustering_query(params, unlabeled, b, self.m_factor.saturating_mul(b), rng)
            }
        }
    }
}
