//! Experiment harnesses: corrective-depth sweeps, component ablations and
//! committee-size sweeps. Runs execute on a rayon pool of `jobs` threads;
//! tables do not depend on scheduling.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cadr::CadrParams;
use crate::criticore::{score_clauses, Clause, PromptBundle};
use crate::lexicon::{descriptor, extract_text, implications, DescriptorKind, LEXICON_COUNT};

use super::{
    coverage, run_critifusion, Backends, ComponentMask, ConfigError, PipelineConfig, PipelineError,
    RunOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    K,
    Ablation,
    Ensemble,
}

/// One run inside a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub prompt: String,
    pub run_id: String,
    pub base_score: f64,
    pub final_score: f64,
    /// Final image scored against [`reference_clauses`].
    pub reference_score: f64,
    pub coverage: usize,
    pub cadr: CadrParams,
    pub k: Option<usize>,
}

/// One axis value, averaged over the prompt set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: String,
    pub base_score: f64,
    pub final_score: f64,
    pub reference_score: f64,
    pub coverage: f64,
    pub runs: Vec<SweepRun>,
    #[serde(skip)]
    order: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialize") + "\n")
            .collect()
    }

    pub fn row(&self, value: &str) -> Option<&SweepRow> {
        self.rows.iter().find(|r| r.value == value)
    }
}

impl fmt::Display for SweepTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<22} {:>8} {:>8} {:>8} {:>8}", "value", "base", "final", "ref", "cover")?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<22} {:>8.4} {:>8.4} {:>8.4} {:>8.2}",
                r.value, r.base_score, r.final_score, r.reference_score, r.coverage
            )?;
        }
        Ok(())
    }
}

/// Fixed evaluation clauses for `prompt`: its descriptors plus every
/// implication of its entities across all mock lexicons, one clause each.
pub fn reference_clauses(prompt: &str) -> Result<Vec<Clause>, PipelineError> {
    let mut ids = extract_text(prompt);
    let entities: Vec<usize> = ids
        .iter()
        .copied()
        .filter(|&d| descriptor(d).kind == DescriptorKind::Entity)
        .collect();
    for agent in 1..=LEXICON_COUNT as u32 {
        for &e in &entities {
            for d in implications(agent, e) {
                if !ids.contains(&d) {
                    ids.push(d);
                }
            }
        }
    }
    let clauses = if ids.is_empty() {
        vec![PromptBundle::from_text(prompt, usize::MAX).tokens]
    } else {
        ids.iter()
            .map(|&d| descriptor(d).phrase.split(' ').map(str::to_owned).collect())
            .collect()
    };
    clauses
        .into_iter()
        .enumerate()
        .map(|(i, t)| Clause::new(i, t).map_err(|e| PipelineError::Options(e.to_string())))
        .collect()
}

struct Job {
    row: usize,
    config: PipelineConfig,
    options: RunOptions,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, PipelineError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| PipelineError::Pool(e.to_string()))
}

fn check_prompts(prompts: &[String]) -> Result<(), PipelineError> {
    if prompts.is_empty() {
        return Err(ConfigError::Invalid("no prompts given".into()).into());
    }
    Ok(())
}

/// Runs every job and averages per row. `labels[i]` is `(value, order)` of row `i`.
fn execute(
    axis: SweepAxis,
    labels: Vec<(String, u64)>,
    work: Vec<Job>,
    backends: &Backends,
    jobs: usize,
) -> Result<SweepTable, PipelineError> {
    let results: Vec<Result<(usize, SweepRun), PipelineError>> = pool(jobs)?.install(|| {
        work.par_iter()
            .map(|job| {
                let out = run_critifusion(&job.config, backends, &job.options)?;
                if let Some(e) = out.error {
                    return Err(e);
                }
                let summary = out.record.summary().expect("successful runs have a summary");
                let image = out.final_image.as_ref().expect("successful runs decode");
                let reference = reference_clauses(&job.config.prompt)?;
                let scored = score_clauses(&reference, image, backends.critic.as_ref())
                    .map_err(|e| PipelineError::Options(e.to_string()))?;
                Ok((
                    job.row,
                    SweepRun {
                        prompt: job.config.prompt.clone(),
                        run_id: out.record.header.run_id.clone(),
                        base_score: summary.base_score,
                        final_score: summary.final_score,
                        reference_score: scored.mean_score,
                        coverage: coverage(&summary.enhanced_prompt),
                        cadr: summary.cadr,
                        k: summary.plan.map(|p| p.k),
                    },
                ))
            })
            .collect()
    });
    let mut per_row: Vec<Vec<SweepRun>> = vec![Vec::new(); labels.len()];
    for r in results {
        let (row, run) = r?;
        per_row[row].push(run);
    }
    let mean = |runs: &[SweepRun], f: fn(&SweepRun) -> f64| {
        runs.iter().map(f).sum::<f64>() / runs.len() as f64
    };
    let mut rows: Vec<SweepRow> = labels
        .into_iter()
        .zip(per_row)
        .map(|((value, order), runs)| SweepRow {
            axis,
            value,
            base_score: mean(&runs, |r| r.base_score),
            final_score: mean(&runs, |r| r.final_score),
            reference_score: mean(&runs, |r| r.reference_score),
            coverage: mean(&runs, |r| r.coverage as f64),
            runs,
            order,
        })
        .collect();
    rows.sort_by_key(|r| r.order);
    Ok(SweepTable { axis, rows })
}

/// One row per corrective depth `k`, with `T'` fixed to `sweep.t_prime`.
pub fn sweep_k(
    config: &PipelineConfig,
    ks: &[usize],
    prompts: &[String],
    jobs: usize,
) -> Result<SweepTable, PipelineError> {
    check_prompts(prompts)?;
    let t_prime = config.sweep_t_prime;
    let mut seen = Vec::new();
    for &k in ks {
        if seen.contains(&k) {
            return Err(PipelineError::Options(format!("k = {k} listed twice")));
        }
        if k > t_prime as usize {
            return Err(PipelineError::Options(format!("k = {k} exceeds T' = {t_prime}")));
        }
        seen.push(k);
    }
    if ks.is_empty() {
        return Err(PipelineError::Options("no k values given".into()));
    }
    let backends = Backends::from_config(config)?;
    let labels = ks.iter().map(|&k| (k.to_string(), k as u64)).collect();
    let work = ks
        .iter()
        .enumerate()
        .flat_map(|(row, &k)| {
            prompts.iter().map(move |p| Job {
                row,
                config: config.with_prompt(p),
                options: RunOptions {
                    t_prime: Some(t_prime),
                    k: Some(k),
                    ..RunOptions::default()
                },
            })
        })
        .collect();
    execute(SweepAxis::K, labels, work, &backends, jobs)
}

/// The full model plus one row per mask in `variants`.
pub fn ablate(
    config: &PipelineConfig,
    variants: &[ComponentMask],
    prompts: &[String],
    jobs: usize,
) -> Result<SweepTable, PipelineError> {
    check_prompts(prompts)?;
    let mut masks = vec![ComponentMask::FULL];
    for &m in variants {
        if !masks.contains(&m) {
            masks.push(m);
        }
    }
    let backends = Backends::from_config(config)?;
    let labels = masks.iter().map(|m| (m.to_string(), m.rank() as u64)).collect();
    let work = masks
        .iter()
        .enumerate()
        .flat_map(|(row, &m)| {
            prompts.iter().map(move |p| Job {
                row,
                config: config.with_prompt(p),
                options: RunOptions {
                    disable: m,
                    ..RunOptions::default()
                },
            })
        })
        .collect();
    execute(SweepAxis::Ablation, labels, work, &backends, jobs)
}

/// One row per committee size (MAD agents or MoA layer width).
pub fn sweep_ensemble(
    config: &PipelineConfig,
    sizes: &[usize],
    prompts: &[String],
    jobs: usize,
) -> Result<SweepTable, PipelineError> {
    check_prompts(prompts)?;
    if sizes.is_empty() {
        return Err(PipelineError::Options("no committee sizes given".into()));
    }
    let mut seen = Vec::new();
    for &n in sizes {
        if n == 0 || n > LEXICON_COUNT {
            return Err(ConfigError::Invalid(format!(
                "committee size {n} outside 1..={LEXICON_COUNT}"
            ))
            .into());
        }
        if seen.contains(&n) {
            return Err(PipelineError::Options(format!("size {n} listed twice")));
        }
        seen.push(n);
    }
    let backends = Backends::from_config(config)?;
    let labels = sizes.iter().map(|&n| (n.to_string(), n as u64)).collect();
    let work = sizes
        .iter()
        .enumerate()
        .flat_map(|(row, &n)| {
            prompts.iter().map(move |p| {
                let mut c = config.with_prompt(p);
                c.committee = c.committee.with_width(n);
                Job {
                    row,
                    config: c,
                    options: RunOptions::default(),
                }
            })
        })
        .collect();
    execute(SweepAxis::Ensemble, labels, work, &backends, jobs)
}
