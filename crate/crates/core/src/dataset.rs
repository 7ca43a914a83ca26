//! Multi-label archives: synthetic generation, CSV ingestion, splitting and
//! minority-class removal scenarios.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Presence/absence of each of `C` classes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiLabelVector(Vec<bool>);

impl MultiLabelVector {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn zeros(num_classes: usize) -> Self {
        Self(vec![false; num_classes])
    }

    /// Builds from `0`/`1` integers, rejecting anything else.
    pub fn from_binary(values: &[u8]) -> Result<Self> {
        values
            .iter()
            .map(|&v| match v {
                0 => Ok(false),
                1 => Ok(true),
                other => Err(Error::Config(format!("label value {other} is not binary"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> bool {
        self.0[class]
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn count_present(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Labels as `0.0`/`1.0` targets.
    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: usize,
    pub features: Vec<f64>,
    pub labels: MultiLabelVector,
}

/// An ordered collection of samples sharing feature dimension and class set.
///
/// Sub-archives produced by [`split`] and [`apply_scenario`] keep the original
/// sample ids, so ids are unique but only dense for a freshly built archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    samples: Vec<Sample>,
    class_names: Vec<String>,
    dim: usize,
}

impl Archive {
    /// Validates that every sample matches `dim` and the class count and that ids are unique.
    pub fn new(samples: Vec<Sample>, class_names: Vec<String>, dim: usize) -> Result<Self> {
        let num_classes = class_names.len();
        let mut seen = BTreeSet::new();
        for s in &samples {
            if s.features.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: s.features.len(),
                });
            }
            if s.labels.len() != num_classes {
                return Err(Error::DimensionMismatch {
                    expected: num_classes,
                    actual: s.labels.len(),
                });
            }
            if !seen.insert(s.id) {
                return Err(Error::Config(format!("duplicate sample id {}", s.id)));
            }
        }
        Ok(Self {
            samples,
            class_names,
            dim,
        })
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Self {
            samples,
            class_names: self.class_names.clone(),
            dim: self.dim,
        }
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.id).collect()
    }

    pub fn get(&self, id: usize) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    /// Pooled standard deviation over every feature coordinate.
    pub fn feature_std(&self) -> f64 {
        pooled_std(self.samples.iter().map(|s| s.features.as_slice()))
    }
}

pub(crate) fn pooled_std<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone) -> f64 {
    let (mut n, mut sum) = (0usize, 0.0);
    for row in rows.clone() {
        n += row.len();
        sum += row.iter().sum::<f64>();
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let var = rows
        .flat_map(|r| r.iter())
        .map(|x| (x - mean).powi(2))
        .sum::<f64>()
        / n as f64;
    var.sqrt()
}

pub fn class_name(j: usize) -> String {
    format!("y{j}")
}

/// Label coupling: with probability `strength`, class `target` takes the bit of class `source`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoOccurrence {
    pub source: usize,
    pub target: usize,
    pub strength: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub size: usize,
    pub class_priors: Vec<f64>,
    #[serde(default)]
    pub cooccurrence: Vec<CoOccurrence>,
    pub noise_std: f64,
    /// Keep all-zero label vectors instead of redrawing them.
    #[serde(default)]
    pub allow_empty_labels: bool,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.dim == 0 {
            return Err(Error::Config("dim must be at least 1".into()));
        }
        if self.class_priors.len() != self.num_classes {
            return Err(Error::Config(format!(
                "class_priors has {} entries, expected {}",
                self.class_priors.len(),
                self.num_classes
            )));
        }
        if let Some(p) = self.class_priors.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Config(format!("class prior {p} outside [0, 1]")));
        }
        if !self.allow_empty_labels && self.class_priors.iter().all(|&p| p == 0.0) {
            return Err(Error::Config(
                "all class priors are zero but empty label vectors are not allowed".into(),
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Config(format!(
                "noise_std must be nonnegative, got {}",
                self.noise_std
            )));
        }
        for pair in &self.cooccurrence {
            if pair.source >= self.num_classes || pair.target >= self.num_classes {
                return Err(Error::Config(format!(
                    "co-occurrence pair ({}, {}) references a missing class",
                    pair.source, pair.target
                )));
            }
            if !(0.0..=1.0).contains(&pair.strength) {
                return Err(Error::Config(format!(
                    "co-occurrence strength {} outside [0, 1]",
                    pair.strength
                )));
            }
        }
        Ok(())
    }
}

const MAX_LABEL_REDRAWS: usize = 100_000;

/// Draws a synthetic archive.
///
/// Each class owns a standard-normal prototype; a sample's features are the
/// sum of its present classes' prototypes plus isotropic Gaussian noise.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<Archive> {
    config.validate()?;
    let (c, d) = (config.num_classes, config.dim);
    let mut proto_rng = rng::stream(config.seed, 0);
    let prototypes: Vec<Vec<f64>> = (0..c)
        .map(|_| {
            (0..d)
                .map(|_| StandardNormal.sample(&mut proto_rng))
                .collect()
        })
        .collect();

    let mut label_rng = rng::stream(config.seed, 1);
    let mut noise_rng = rng::stream(config.seed, 2);
    let noise =
        Normal::new(0.0, config.noise_std).map_err(|e| Error::Config(format!("noise_std: {e}")))?;

    let mut samples = Vec::with_capacity(config.size);
    for id in 0..config.size {
        let labels = draw_labels(config, &mut label_rng)?;
        let mut features = vec![0.0; d];
        for (j, proto) in prototypes.iter().enumerate() {
            if labels.get(j) {
                for (f, p) in features.iter_mut().zip(proto) {
                    *f += p;
                }
            }
        }
        if config.noise_std > 0.0 {
            for f in &mut features {
                *f += noise.sample(&mut noise_rng);
            }
        }
        samples.push(Sample {
            id,
            features,
            labels,
        });
    }
    Archive::new(samples, (0..c).map(class_name).collect(), d)
}

fn draw_labels<R: Rng + ?Sized>(config: &SyntheticConfig, rng: &mut R) -> Result<MultiLabelVector> {
    for _ in 0..MAX_LABEL_REDRAWS {
        let mut bits: Vec<bool> = config
            .class_priors
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect();
        for pair in &config.cooccurrence {
            if rng.random::<f64>() < pair.strength {
                bits[pair.target] = bits[pair.source];
            }
        }
        if config.allow_empty_labels || bits.iter().any(|&b| b) {
            return Ok(MultiLabelVector(bits));
        }
    }
    Err(Error::Config(
        "class priors too small: could not draw a non-empty label vector".into(),
    ))
}

pub fn class_frequencies(archive: &Archive) -> Vec<usize> {
    let mut counts = vec![0; archive.num_classes()];
    for s in &archive.samples {
        for (c, &b) in counts.iter_mut().zip(s.labels.bits()) {
            *c += b as usize;
        }
    }
    counts
}

/// Formats with 9 significant digits, printed in the shortest form that round-trips.
fn format_feature(x: f64) -> String {
    let rounded: f64 = format!("{x:.8e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Writes `id,f0..f{d-1},y0..y{C-1}` rows.
pub fn write_csv(archive: &Archive, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = BufWriter::new(file);
    let mut header = vec!["id".to_string()];
    header.extend((0..archive.dim).map(|i| format!("f{i}")));
    header.extend((0..archive.num_classes()).map(|j| format!("y{j}")));
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for s in &archive.samples {
        let mut row = vec![s.id.to_string()];
        row.extend(s.features.iter().map(|&x| format_feature(x)));
        row.extend(
            s.labels
                .bits()
                .iter()
                .map(|&b| if b { "1" } else { "0" }.to_string()),
        );
        writeln!(w, "{}", row.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Reads the CSV format written by [`write_csv`]. Ids are assigned by row order.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Archive> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let header = reader
        .headers()
        .map_err(|e| format_err(1, "header", e.to_string()))?
        .clone();
    let columns: Vec<&str> = header.iter().collect();
    if columns.first() != Some(&"id") {
        return Err(format_err(1, "id", "first column must be `id`".into()));
    }
    let dim = columns[1..]
        .iter()
        .take_while(|c| c.starts_with('f'))
        .count();
    let num_classes = columns.len() - 1 - dim;
    for (i, name) in columns[1..=dim].iter().enumerate() {
        if *name != format!("f{i}") {
            return Err(format_err(1, name, format!("expected column f{i}")));
        }
    }
    for (j, name) in columns[1 + dim..].iter().enumerate() {
        if *name != format!("y{j}") {
            return Err(format_err(1, name, format!("expected column y{j}")));
        }
    }
    if num_classes == 0 {
        return Err(format_err(1, "header", "no label columns".into()));
    }

    let mut samples = Vec::new();
    for (row_idx, record) in reader.records().enumerate() {
        // Header is line 1.
        let line = row_idx + 2;
        let record = record.map_err(|e| format_err(line, "record", e.to_string()))?;
        if record.len() != columns.len() {
            return Err(format_err(
                line,
                "record",
                format!("expected {} fields, found {}", columns.len(), record.len()),
            ));
        }
        let features = (0..dim)
            .map(|i| {
                let cell = &record[1 + i];
                cell.trim().parse::<f64>().map_err(|_| {
                    format_err(line, columns[1 + i], format!("invalid number `{cell}`"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let labels = (0..num_classes)
            .map(|j| {
                let col = 1 + dim + j;
                match record[col].trim() {
                    "0" => Ok(false),
                    "1" => Ok(true),
                    other => Err(format_err(
                        line,
                        columns[col],
                        format!("label must be 0 or 1, found `{other}`"),
                    )),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        samples.push(Sample {
            id: row_idx,
            features,
            labels: MultiLabelVector(labels),
        });
    }
    let class_names = columns[1 + dim..].iter().map(|s| s.to_string()).collect();
    Archive::new(samples, class_names, dim)
}

fn format_err(row: usize, column: &str, message: String) -> Error {
    Error::Format {
        row,
        column: column.to_string(),
        message,
    }
}

/// Fractions for the pool / validation / test partition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub pool: f64,
    pub val: f64,
    pub test: f64,
}

impl SplitFractions {
    pub fn new(pool: f64, val: f64, test: f64) -> Self {
        Self { pool, val, test }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub pool: Archive,
    pub val: Archive,
    pub test: Archive,
}

/// Seeded disjoint partition. Sizes are `round(N * fraction)` for pool and
/// validation; test takes the remainder. Each part keeps ascending id order.
pub fn split(archive: &Archive, fractions: SplitFractions, seed: u64) -> Result<Splits> {
    let SplitFractions { pool, val, test } = fractions;
    if [pool, val, test].iter().any(|f| f.is_nan() || *f < 0.0) || pool <= 0.0 {
        return Err(Error::Config(format!(
            "split fractions must be nonnegative with a positive pool share, got ({pool}, {val}, {test})"
        )));
    }
    if ((pool + val + test) - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions sum to {}, expected 1",
            pool + val + test
        )));
    }
    let n = archive.len();
    let n_pool = ((n as f64 * pool).round() as usize).min(n);
    let n_val = ((n as f64 * val).round() as usize).min(n - n_pool);

    let mut order: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, 0);
    rng::shuffle(&mut r, &mut order);

    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_by_key(|&i| archive.samples[i].id);
        archive.with_samples(idx.iter().map(|&i| archive.samples[i].clone()).collect())
    };
    Ok(Splits {
        pool: take(&order[..n_pool]),
        val: take(&order[n_pool..n_pool + n_val]),
        test: take(&order[n_pool + n_val..]),
    })
}

/// Minority-class removal applied to a pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub minority_classes: Vec<usize>,
    pub remove_per_class: usize,
    #[serde(default)]
    pub exclusion_pairs: Vec<(usize, usize)>,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Draws `count` classes from `candidates` uniformly, never listing both
    /// members of an exclusion pair.
    pub fn choose_classes(
        candidates: &[usize],
        count: usize,
        exclusion_pairs: &[(usize, usize)],
        seed: u64,
    ) -> Result<Vec<usize>> {
        let mut r = rng::stream(seed, 7);
        let mut remaining = candidates.to_vec();
        let mut chosen: Vec<usize> = Vec::with_capacity(count);
        while chosen.len() < count {
            remaining.retain(|&c| !chosen.iter().any(|&k| excluded(exclusion_pairs, k, c)));
            if remaining.is_empty() {
                return Err(Error::Scenario(format!(
                    "cannot choose {count} classes without violating an exclusion pair"
                )));
            }
            let i = rng::uniform_index(&mut r, remaining.len());
            chosen.push(remaining.remove(i));
        }
        Ok(chosen)
    }
}

fn excluded(pairs: &[(usize, usize)], a: usize, b: usize) -> bool {
    pairs
        .iter()
        .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
}

/// Removes, for each listed class in order, `remove_per_class` samples drawn
/// uniformly without replacement from the remaining samples containing it.
pub fn apply_scenario(pool: &Archive, spec: &ScenarioSpec) -> Result<Archive> {
    let c = pool.num_classes();
    for (i, &a) in spec.minority_classes.iter().enumerate() {
        if a >= c {
            return Err(Error::Scenario(format!("class {a} out of range (C = {c})")));
        }
        for &b in &spec.minority_classes[i + 1..] {
            if a == b {
                return Err(Error::Scenario(format!("class {a} listed twice")));
            }
            if excluded(&spec.exclusion_pairs, a, b) {
                return Err(Error::Scenario(format!(
                    "classes {a} and {b} form an exclusion pair"
                )));
            }
        }
    }
    let freq = class_frequencies(pool);
    for &a in &spec.minority_classes {
        if freq[a] < spec.remove_per_class {
            return Err(Error::Scenario(format!(
                "class {a} has {} samples, cannot remove {}",
                freq[a], spec.remove_per_class
            )));
        }
    }

    let mut r = rng::stream(spec.seed, 0);
    let mut removed = vec![false; pool.len()];
    for &class in &spec.minority_classes {
        let mut holders: Vec<usize> = pool
            .samples
            .iter()
            .enumerate()
            .filter(|(i, s)| !removed[*i] && s.labels.get(class))
            .map(|(i, _)| i)
            .collect();
        if holders.len() < spec.remove_per_class {
            return Err(Error::Scenario(format!(
                "class {class} has only {} samples left after earlier removals, cannot remove {}",
                holders.len(),
                spec.remove_per_class
            )));
        }
        rng::partial_shuffle(&mut r, &mut holders, spec.remove_per_class);
        for &i in &holders[..spec.remove_per_class] {
            removed[i] = true;
        }
    }
    Ok(pool.with_samples(
        pool.samples
            .iter()
            .zip(&removed)
            .filter(|(_, &gone)| !gone)
            .map(|(s, _)| s.clone())
            .collect(),
    ))
}
