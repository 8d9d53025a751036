//! Cartesian variant × size × seed grids.

use std::fmt::Write;

use crate::config::ExperimentConfig;
use crate::error::{BenchError, Result};
use crate::results::ResultRecord;
use crate::runner::run_experiment;
use crate::tasks::Split;

/// A base experiment and the axes it is swept over.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub variants: Vec<String>,
    pub sizes: Vec<String>,
    pub seeds: Vec<u64>,
    base: toml::Table,
}

fn strings(t: &toml::Table, key: &str) -> Result<Option<Vec<String>>> {
    let Some(v) = t.get(key) else { return Ok(None) };
    let field = format!("grid.{key}");
    let arr = v.as_array().ok_or_else(|| BenchError::config(&field, "must be an array of strings"))?;
    arr.iter()
        .map(|x| x.as_str().map(String::from).ok_or_else(|| BenchError::config(&field, "must be an array of strings")))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

impl Grid {
    /// An experiment document with an extra `[grid]` table holding
    /// `variants`, `sizes` and `seeds`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut base: toml::Table =
            toml::from_str(text).map_err(|e| BenchError::config("<document>", e.message().to_string()))?;
        let grid = match base.remove("grid") {
            Some(toml::Value::Table(t)) => t,
            Some(_) => return Err(BenchError::config("grid", "must be a table")),
            None => return Err(BenchError::config("grid", "missing [grid] section")),
        };
        if let Some(k) = grid.keys().find(|k| !["variants", "sizes", "seeds"].contains(&k.as_str())) {
            return Err(BenchError::config(format!("grid.{k}"), "unknown field"));
        }
        let variants = strings(&grid, "variants")?.unwrap_or_else(|| vec!["vanilla".into()]);
        let sizes = strings(&grid, "sizes")?.unwrap_or_else(|| vec!["small".into()]);
        let seeds = match grid.get("seeds") {
            None => vec![0],
            Some(v) => v
                .as_array()
                .and_then(|a| a.iter().map(|x| x.as_integer().and_then(|i| u64::try_from(i).ok())).collect())
                .ok_or_else(|| BenchError::config("grid.seeds", "must be an array of non-negative integers"))?,
        };
        for (field, empty) in [("variants", variants.is_empty()), ("sizes", sizes.is_empty()), ("seeds", seeds.is_empty())] {
            if empty {
                return Err(BenchError::config(format!("grid.{field}"), "must not be empty"));
            }
        }
        let g = Self { variants, sizes, seeds, base };
        g.configs()?;
        Ok(g)
    }

    /// One resolved configuration per grid cell and seed.
    pub fn configs(&self) -> Result<Vec<ExperimentConfig>> {
        let mut out = Vec::new();
        for v in &self.variants {
            for s in &self.sizes {
                for &seed in &self.seeds {
                    let mut t = self.base.clone();
                    t.insert("variant".into(), v.clone().into());
                    let seed = i64::try_from(seed).map_err(|_| BenchError::config("grid.seeds", "seed too large"))?;
                    t.insert("seed".into(), seed.into());
                    let mut model = toml::Table::new();
                    model.insert("size".into(), s.clone().into());
                    t.insert("model".into(), model.into());
                    let text = toml::to_string(&t).expect("table serializes");
                    out.push(ExperimentConfig::from_toml_str(&text)?);
                }
            }
        }
        Ok(out)
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs every cell; returns all records and a variant × size table of the
/// median final test metric over seeds.
pub fn run_grid(grid: &Grid) -> Result<(Vec<ResultRecord>, String)> {
    let configs = grid.configs()?;
    let mut records = Vec::new();
    let mut cells = Vec::new();
    for chunk in configs.chunks(grid.seeds.len()) {
        let mut finals = Vec::new();
        for cfg in chunk {
            let out = run_experiment(cfg)?;
            finals.push(out.final_value(Split::Test, cfg.task.metric).expect("test record"));
            records.extend(out.records);
        }
        cells.push(median(finals));
    }
    let metric = configs[0].task.metric;
    let mut table = String::new();
    let w = grid.variants.iter().map(|v| v.len()).max().unwrap_or(0).max(7);
    write!(table, "{:<w$}", format!("{metric}")).unwrap();
    for s in &grid.sizes {
        write!(table, " {s:>12}").unwrap();
    }
    table.push('\n');
    for (i, v) in grid.variants.iter().enumerate() {
        write!(table, "{v:<w$}").unwrap();
        for j in 0..grid.sizes.len() {
            write!(table, " {:>12.5}", cells[i * grid.sizes.len() + j]).unwrap();
        }
        table.push('\n');
    }
    Ok((records, table))
}
