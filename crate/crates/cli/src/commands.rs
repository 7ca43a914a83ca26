use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mgeal_core::dataset::{class_frequencies, write_csv, Archive};
use mgeal_core::experiment::{
    self, log_lines, scenario_pools, ExperimentConfig, Report, RunLogLine,
};
use mgeal_core::metrics::CurveSummary;
use mgeal_core::nn::Stack;
use mgeal_core::ssl;
use mgeal_core::{Checkpoint, Strategy};
use serde::Serialize;

use crate::output;
use crate::Common;

pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => {
            let text =
                fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => ExperimentConfig::reference(),
    };
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        config.seeds = seeds.clone();
    }
    if let Some(data) = &common.data {
        config.dataset = Some(data.clone());
    }
    config.validate().context("invalid config")?;
    Ok(config)
}

fn load_encoder(config: &ExperimentConfig) -> Result<Option<Stack>> {
    let Some(path) = &config.encoder_checkpoint else {
        return Ok(None);
    };
    let encoder = Checkpoint::load(path)
        .and_then(Checkpoint::into_encoder)
        .with_context(|| format!("loading encoder {}", path.display()))?;
    Ok(Some(encoder))
}

fn print_frequencies(archive: &Archive) {
    let n = archive.len().max(1) as f64;
    println!("{:<10} {:>8} {:>9}", "class", "count", "fraction");
    for (name, count) in archive.class_names().iter().zip(class_frequencies(archive)) {
        println!("{name:<10} {count:>8} {:>9.4}", count as f64 / n);
    }
}

pub fn generate(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    if config.dataset.is_some() {
        bail!("generate needs synthetic settings, but `dataset` is set");
    }
    let archive = mgeal_core::dataset::generate_synthetic(&config.synthetic())?;
    output::ensure_dir(&config.output_dir)?;
    let path = config.output_dir.join("dataset.csv");
    write_csv(&archive, &path)?;
    println!("wrote {} samples to {}", archive.len(), path.display());
    print_frequencies(&archive);
    Ok(())
}

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

pub fn pretrain(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let splits = config.splits()?;
    let out = ssl::pretrain(&splits.pool, &config.byol_config())?;
    let dir = &config.output_dir;
    output::ensure_dir(dir)?;
    let encoder_path = dir.join("encoder.json");
    Checkpoint::from_encoder(&out.encoder).save(&encoder_path)?;
    let rows: Vec<LossRow> = out
        .epoch_losses
        .iter()
        .enumerate()
        .map(|(epoch, &loss)| LossRow { epoch, loss })
        .collect();
    output::csv(&dir.join("pretrain_loss.csv"), &rows)?;
    if let (Some(first), Some(last)) = (rows.first(), rows.last()) {
        println!(
            "BYOL loss {:.4} -> {:.4} over {} epochs",
            first.loss,
            last.loss,
            rows.len()
        );
    }
    println!("wrote {}", encoder_path.display());
    Ok(())
}

#[derive(Serialize)]
struct RunSummary<'a> {
    scenario: &'a str,
    strategy: &'a str,
    seeds: &'a [u64],
    final_macro_f1: Vec<f64>,
    summary: &'a CurveSummary,
}

fn run_file(dir: &Path, strategy: &str, seed: u64) -> PathBuf {
    dir.join(format!("{strategy}_seed{seed}.jsonl"))
}

pub fn run(common: &Common, strategy: Option<Strategy>) -> Result<()> {
    let mut config = load_config(common)?;
    let strategy = strategy.unwrap_or(config.strategies[0]);
    config.strategies = vec![strategy];
    config.scenario_removals.truncate(1);
    let encoder = load_encoder(&config)?;
    let splits = config.splits()?;
    let pool = scenario_pools(&config, &splits, encoder.as_ref())?
        .pop()
        .expect("one scenario requested");
    let runs = experiment::run_strategies(
        &config,
        &pool.pool,
        &splits.val,
        &splits.test,
        pool.encoder.as_ref(),
        common.jobs,
    )?
    .pop()
    .expect("one strategy requested");

    let dir = &config.output_dir;
    for run in &runs.runs {
        output::jsonl(
            &run_file(dir, strategy.tag(), run.seed),
            &log_lines(&pool.name, run),
        )?;
    }
    output::json(
        &dir.join("summary.json"),
        &RunSummary {
            scenario: &pool.name,
            strategy: strategy.tag(),
            seeds: &config.seeds,
            final_macro_f1: runs.final_macro_f1(),
            summary: &runs.summary,
        },
    )?;
    println!("{:>8} {:>10} {:>10}", "labeled", "micro_f1", "macro_f1");
    for c in &runs.summary.checkpoints {
        println!(
            "{:>8} {:>10.4} {:>10.4}",
            c.labeled_count, c.micro_mean, c.macro_mean
        );
    }
    println!(
        "{strategy}: {} runs, mean-over-iterations macro F1 {:.4}",
        runs.runs.len(),
        runs.summary.mean_macro_over_iterations
    );
    Ok(())
}

fn write_report(dir: &Path, report: &Report) -> Result<()> {
    output::csv(&dir.join("curves.csv"), &report.curves)?;
    output::csv(&dir.join("scenario_summary.csv"), &report.scenarios)?;
    println!(
        "{:<12} {:<16} {:>5} {:>14} {:>12}",
        "scenario", "strategy", "runs", "mean_macro_f1", "final_macro"
    );
    for row in &report.scenarios {
        println!(
            "{:<12} {:<16} {:>5} {:>14.4} {:>12.4}",
            row.scenario,
            row.strategy,
            row.runs,
            row.mean_macro_over_iterations,
            row.final_macro_mean
        );
    }
    Ok(())
}

pub fn compare(common: &Common) -> Result<()> {
    let config = load_config(common)?;
    let encoder = load_encoder(&config)?;
    let splits = config.splits()?;
    let results = experiment::compare(&config, &splits, encoder.as_ref(), common.jobs)?;
    let dir = &config.output_dir;
    for r in &results {
        println!(
            "{}: {} samples after removing {} per minority class",
            r.name, r.pool_size, r.removal
        );
        for s in &r.strategies {
            for run in &s.runs {
                output::jsonl(
                    &run_file(&dir.join("runs").join(&r.name), s.strategy.tag(), run.seed),
                    &log_lines(&r.name, run),
                )?;
            }
        }
    }
    write_report(dir, &Report::from_results(&results))
}

pub fn report(common: &Common, input: Option<PathBuf>) -> Result<()> {
    let dir = load_config(common)?.output_dir;
    let input = input.unwrap_or_else(|| dir.clone());
    let mut lines: Vec<RunLogLine> = Vec::new();
    for path in output::find_jsonl(&input)? {
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let parsed = serde_json::from_str(line)
                .with_context(|| format!("{}:{}: malformed run record", path.display(), i + 1))?;
            lines.push(parsed);
        }
    }
    if lines.is_empty() {
        bail!("no run logs found under {}", input.display());
    }
    write_report(&dir, &Report::from_logs(&lines)?)
}
