//! Ablation sweeps over the dynamic weight and the multi-step count.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{ensure, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{default_multi_steps, RunConfig};
use crate::run::execute;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Dynamic,
    Nsteps,
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynamic" => Ok(Axis::Dynamic),
            "nsteps" => Ok(Axis::Nsteps),
            other => Err(format!("unknown axis `{other}` (expected `dynamic` or `nsteps`)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub label: String,
    pub runs: usize,
    /// Metric means over seeds.
    pub means: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub axis: Axis,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
}

/// The configs compared along `axis`, each with every other setting equal.
pub fn cells(base: &RunConfig, axis: Axis) -> Vec<(String, RunConfig)> {
    let t = base.schedule.num_steps;
    match axis {
        Axis::Dynamic => [true, false]
            .into_iter()
            .map(|on| {
                let mut cfg = base.clone();
                cfg.sampler.dynamic_weight = Some(on);
                (format!("dynamic {}", if on { "on" } else { "off" }), cfg)
            })
            .collect(),
        Axis::Nsteps => {
            let ranges = default_multi_steps(t);
            (1..=3)
                .map(|n| {
                    let mut cfg = base.clone();
                    cfg.sampler.multi_steps = Some(ranges.iter().copied().filter(|r| r.steps <= n).collect());
                    (format!("N={n}"), cfg)
                })
                .collect()
        }
    }
}

/// Runs every cell for seeds `base_seed..base_seed + seeds`, in parallel.
pub fn ablate(config: &RunConfig, base: &Path, axis: Axis, seeds: usize) -> Result<AblationReport> {
    ensure!(seeds > 0, "--seeds must be positive");
    let resolved = config.resolve(base)?;
    let first = resolved.sampler.seed.unwrap_or(0);
    let seed_list: Vec<u64> = (0..seeds as u64).map(|i| first + i).collect();
    let mut out = Vec::new();
    for (label, cfg) in cells(&resolved, axis) {
        let runs: Vec<BTreeMap<String, f64>> = seed_list
            .par_iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.sampler.seed = Some(seed);
                execute(&c).map(|o| o.metrics.flatten())
            })
            .collect::<Result<_>>()?;
        let mut means = BTreeMap::new();
        for run in &runs {
            for (k, v) in run {
                *means.entry(k.clone()).or_insert(0.0) += v / runs.len() as f64;
            }
        }
        out.push(Cell {
            label,
            runs: runs.len(),
            means,
        });
    }
    Ok(AblationReport {
        axis,
        seeds: seed_list,
        cells: out,
    })
}

impl AblationReport {
    pub fn mean(&self, cell: usize, metric: &str) -> Option<f64> {
        self.cells.get(cell)?.means.get(metric).copied()
    }

    /// Cells as rows, metrics as right-aligned columns.
    pub fn table(&self) -> String {
        let metrics: BTreeSet<&String> = self.cells.iter().flat_map(|c| c.means.keys()).collect();
        let mut header = vec!["cell".to_owned()];
        header.extend(metrics.iter().map(|m| m.to_string()));
        let mut rows = vec![header];
        for c in &self.cells {
            let mut row = vec![c.label.clone()];
            row.extend(
                metrics
                    .iter()
                    .map(|m| c.means.get(*m).map_or("-".into(), |v| format!("{v:.6e}"))),
            );
            rows.push(row);
        }
        let widths: Vec<usize> = (0..rows[0].len())
            .map(|i| rows.iter().map(|r| r[i].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for row in rows {
            let cols: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    if i == 0 {
                        format!("{v:<w$}", w = widths[i])
                    } else {
                        format!("{v:>w$}", w = widths[i])
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", cols.join("  ").trim_end());
        }
        out
    }
}
