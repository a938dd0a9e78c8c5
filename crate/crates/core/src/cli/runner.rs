//! Drives simulations for the three subcommands.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::output::{self, opt};
use super::CliError;
use crate::metrics::{self, RunSummary};
use crate::sim::Simulation;

/// Run one configuration to completion and summarize it.
pub fn simulate(cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mut sim = Simulation::new(&cfg.to_setup()?)?;
    sim.run();
    finish(&sim, cfg)
}

fn finish(sim: &Simulation, cfg: &RunConfig) -> Result<RunSummary, CliError> {
    let mut summary = sim.summarize(&cfg.summary);
    summary.config = serde_json::to_value(cfg)?;
    Ok(summary)
}

pub fn run_to_dir(cfg: &RunConfig, out: &Path, trace: bool) -> Result<RunSummary, CliError> {
    output::create_dir(out)?;
    let mut sim = Simulation::new(&cfg.to_setup()?)?;
    if trace {
        let path = out.join("trace.tsv");
        let file = File::create(&path).map_err(|source| CliError::Io { path, source })?;
        sim.set_trace(Box::new(BufWriter::new(file)));
    }
    sim.run();
    let summary = finish(&sim, cfg)?;
    output::write_run(out, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub p: f64,
    pub k: usize,
    pub seed: u64,
    pub mean_median_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub k: usize,
    pub seeds: usize,
    pub mean_ms: Option<f64>,
    pub std_ms: Option<f64>,
    /// Cells whose mean of medians was undefined.
    pub undefined: usize,
}

fn grid(p_list: &[f64], k_list: &[usize], seeds: &[u64]) -> Vec<(f64, usize, u64)> {
    let mut cells = Vec::new();
    for &p in p_list {
        for &k in k_list {
            for &seed in seeds {
                cells.push((p, k, seed));
            }
        }
    }
    cells
}

fn cell_dir(p: f64, k: usize, seed: u64) -> String {
    format!("p{p}_k{k}_seed{seed}")
}

/// Every (P, K, seed) cell, in grid order, with the full summaries.
pub fn sweep(
    cfg: &RunConfig,
    p_list: &[f64],
    k_list: &[usize],
    seeds: &[u64],
) -> Result<Vec<(SweepCell, RunSummary)>, CliError> {
    if p_list.is_empty() || k_list.is_empty() || seeds.is_empty() {
        return Err(CliError::Config("sweep needs at least one P, K and seed".into()));
    }
    grid(p_list, k_list, seeds)
        .into_par_iter()
        .map(|(p, k, seed)| {
            let cell_cfg = RunConfig {
                seed,
                ..cfg.with_proposed(p, k)
            };
            cell_cfg.policy.validate().map_err(|e| CliError::Config(e.to_string()))?;
            let summary = simulate(&cell_cfg).map_err(|e| CliError::Cell {
                p,
                k,
                seed,
                source: Box::new(e),
            })?;
            let cell = SweepCell {
                p,
                k,
                seed,
                mean_median_ms: summary.mean_of_medians_ms,
            };
            Ok((cell, summary))
        })
        .collect()
}

/// Mean and spread across seeds for each (P, K), in first-seen order.
pub fn aggregate(cells: &[SweepCell]) -> Vec<SweepRow> {
    let mut keys: Vec<(f64, usize)> = Vec::new();
    for c in cells {
        if !keys.contains(&(c.p, c.k)) {
            keys.push((c.p, c.k));
        }
    }
    keys.into_iter()
        .map(|(p, k)| {
            let group: Vec<&SweepCell> = cells.iter().filter(|c| c.p == p && c.k == k).collect();
            let defined: Vec<f64> = group.iter().filter_map(|c| c.mean_median_ms).collect();
            let mean_ms = metrics::mean(&defined);
            SweepRow {
                p,
                k,
                seeds: group.len(),
                mean_ms,
                std_ms: mean_ms.map(|_| metrics::std_dev(&defined)),
                undefined: group.len() - defined.len(),
            }
        })
        .collect()
}

pub fn sweep_to_dir(
    cfg: &RunConfig,
    p_list: &[f64],
    k_list: &[usize],
    seeds: &[u64],
    out: &Path,
) -> Result<Vec<SweepCell>, CliError> {
    let results = sweep(cfg, p_list, k_list, seeds)?;
    output::create_dir(out)?;
    for (cell, summary) in &results {
        output::write_run(&out.join("cells").join(cell_dir(cell.p, cell.k, cell.seed)), summary)?;
    }
    let cells: Vec<SweepCell> = results.into_iter().map(|(c, _)| c).collect();
    output::write_csv(
        &out.join("sweep.csv"),
        &output::SWEEP_HEADER,
        cells
            .iter()
            .map(|c| vec![c.p.to_string(), c.k.to_string(), c.seed.to_string(), opt(c.mean_median_ms)]),
    )?;
    output::write_csv(
        &out.join("sweep_summary.csv"),
        &output::SWEEP_SUMMARY_HEADER,
        aggregate(&cells).iter().map(|r| {
            vec![
                r.p.to_string(),
                r.k.to_string(),
                r.seeds.to_string(),
                opt(r.mean_ms),
                opt(r.std_ms),
                r.undefined.to_string(),
            ]
        }),
    )?;
    Ok(cells)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareOutcome {
    pub seed: u64,
    pub proposed: RunSummary,
    pub fixed: RunSummary,
    /// Relative reduction of the fixed arm's mean of medians.
    pub improvement: Option<f64>,
}

#[derive(Serialize)]
struct CompareReport {
    seed: u64,
    proposed_mean_median_ms: Option<f64>,
    fixed_mean_median_ms: Option<f64>,
    improvement: Option<f64>,
    proposed_forks: u64,
    fixed_forks: u64,
}

pub fn relative_improvement(proposed: Option<f64>, fixed: Option<f64>) -> Option<f64> {
    match (proposed, fixed) {
        (Some(p), Some(f)) if f > 0.0 => Some((f - p) / f),
        _ => None,
    }
}

/// Both arms share the seed, hence regions, hash power and block schedule.
pub fn compare(cfg: &RunConfig) -> Result<CompareOutcome, CliError> {
    let proposed_cfg = match cfg.policy {
        crate::pns::SelectionPolicy::Proposed(_) => cfg.clone(),
        _ => {
            let d = crate::pns::ProposedParams::default();
            cfg.with_proposed(d.p, d.k)
        }
    };
    let fixed_cfg = cfg.with_fixed_random();
    let (proposed, fixed) = rayon::join(|| simulate(&proposed_cfg), || simulate(&fixed_cfg));
    let (proposed, fixed) = (proposed?, fixed?);
    Ok(CompareOutcome {
        seed: cfg.seed,
        improvement: relative_improvement(proposed.mean_of_medians_ms, fixed.mean_of_medians_ms),
        proposed,
        fixed,
    })
}

pub fn compare_to_dir(cfg: &RunConfig, out: &Path) -> Result<CompareOutcome, CliError> {
    let outcome = compare(cfg)?;
    output::write_run(&out.join("proposed"), &outcome.proposed)?;
    output::write_run(&out.join("fixed"), &outcome.fixed)?;
    output::write_json(
        &out.join("compare.json"),
        &CompareReport {
            seed: outcome.seed,
            proposed_mean_median_ms: outcome.proposed.mean_of_medians_ms,
            fixed_mean_median_ms: outcome.fixed.mean_of_medians_ms,
            improvement: outcome.improvement,
            proposed_forks: outcome.proposed.forks.fork_count,
            fixed_forks: outcome.fixed.forks.fork_count,
        },
    )?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(p: f64, k: usize, seed: u64, m: Option<f64>) -> SweepCell {
        SweepCell {
            p,
            k,
            seed,
            mean_median_ms: m,
        }
    }

    #[test]
    fn aggregate_groups_by_grid_point() {
        let rows = aggregate(&[
            cell(0.1, 1, 1, Some(100.0)),
            cell(0.1, 1, 2, Some(300.0)),
            cell(0.2, 1, 1, None),
        ]);
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].mean_ms, Some(200.0));
        assert!((rows[0].std_ms.unwrap() - 141.421_356).abs() < 1e-5);
        assert_eq!(rows[1].mean_ms, None);
        assert_eq!(rows[1].undefined, 1);
    }

    #[test]
    fn improvement_is_relative_to_the_baseline() {
        assert_eq!(relative_improvement(Some(90.0), Some(100.0)), Some(0.1));
        assert_eq!(relative_improvement(Some(90.0), None), None);
        assert_eq!(relative_improvement(Some(0.0), Some(0.0)), None);
    }

    #[test]
    fn grid_order_is_p_then_k_then_seed() {
        let g = grid(&[0.1, 0.2], &[1, 2], &[7]);
        assert_eq!(g, vec![(0.1, 1, 7), (0.1, 2, 7), (0.2, 1, 7), (0.2, 2, 7)]);
        assert_eq!(cell_dir(0.3, 1, 2), "p0.3_k1_seed2");
    }
}
