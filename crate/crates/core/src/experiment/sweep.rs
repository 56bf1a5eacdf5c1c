use std::collections::BTreeMap;
use std::path::Path;

use super::config::ExperimentConfig;
use super::run::{run_experiment, RunArtifacts};
use crate::error::{Error, Result};
use crate::rng::{child_seed, Stage};

/// A config key (dotted path, e.g. `k` or `model.p`) and the values it takes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub name: String,
    /// TOML literals; bare words that do not parse are taken as strings.
    pub values: Vec<String>,
}

impl SweepAxis {
    /// Parses `name=v1,v2,...`; commas inside brackets or braces belong to the value.
    pub fn parse(spec: &str) -> Result<Self> {
        let (name, rest) = spec.split_once('=').ok_or_else(|| Error::Config(format!("axis `{spec}` is not name=values")))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(Error::Config("axis name is empty".into()));
        }
        let mut values = Vec::new();
        let (mut depth, mut cur) = (0i32, String::new());
        for ch in rest.chars() {
            match ch {
                '[' | '{' => depth += 1,
                ']' | '}' => depth -= 1,
                ',' if depth == 0 => {
                    values.push(std::mem::take(&mut cur).trim().to_string());
                    continue;
                }
                _ => {}
            }
            cur.push(ch);
        }
        values.push(cur.trim().to_string());
        if values.iter().any(String::is_empty) {
            return Err(Error::Config(format!("axis `{spec}` has an empty value")));
        }
        Ok(SweepAxis { name: name.to_string(), values })
    }
}

/// `template` with the dotted key `name` set to `value`, revalidated.
pub fn apply_axis(template: &ExperimentConfig, name: &str, value: &str) -> Result<ExperimentConfig> {
    let mut root: toml::Table = toml::from_str(&template.to_toml_string()).map_err(|e| Error::Config(e.to_string()))?;
    let parsed = match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let mut keys: Vec<&str> = name.split('.').collect();
    let last = keys.pop().expect("split yields at least one piece");
    let mut table = &mut root;
    for key in keys {
        table = table
            .entry(key)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` in axis `{name}` is not a table")))?;
    }
    table.insert(last.to_string(), parsed);
    let cfg: ExperimentConfig = toml::Value::Table(root).try_into().map_err(|e: toml::de::Error| Error::Config(format!("axis {name}={value}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// One `sweep.csv` line: a single run (`repeat = Some`) or the mean over repeats (`None`).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub axis_value: String,
    pub repeat: Option<usize>,
    pub seed: Option<u64>,
    pub method: String,
    pub rmse: f64,
    pub concentration_ratio: f64,
    pub gaussian_kl: f64,
    pub weight_ess: Option<f64>,
    pub bytes_communicated: f64,
    /// `ok`, or the error for a failed run.
    pub status: String,
}

#[derive(Debug, Clone, Default)]
pub struct SweepResult {
    pub axis: String,
    pub rows: Vec<SweepRow>,
    pub failures: usize,
}

/// Seed for repeat `i`: the template seed first, derived seeds after it.
pub fn repeat_seed(base: u64, i: usize) -> u64 {
    if i == 0 {
        base
    } else {
        child_seed(base, Stage::Sweep, i as u64)
    }
}

/// Runs every axis value `repeats` times, continuing past failures.
///
/// `on_run` sees each successful run (for writing per-run outputs); its
/// errors are recorded like run failures.
pub fn sweep<F>(template: &ExperimentConfig, axis: &SweepAxis, repeats: usize, mut on_run: F) -> Result<SweepResult>
where
    F: FnMut(&RunArtifacts, &str, usize) -> Result<()>,
{
    if axis.values.is_empty() {
        return Err(Error::Config("sweep axis has no values".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    let mut result = SweepResult { axis: axis.name.clone(), ..Default::default() };
    for value in &axis.values {
        let cell = match apply_axis(template, &axis.name, value) {
            Ok(c) => c,
            Err(e) => {
                log::error!("sweep {}={value}: {e}", axis.name);
                result.failures += repeats;
                result.rows.push(failed_row(value, None, None, &e));
                continue;
            }
        };
        let mut per_method: BTreeMap<String, Vec<SweepRow>> = BTreeMap::new();
        for i in 0..repeats {
            let seed = repeat_seed(cell.seed, i);
            let cfg = ExperimentConfig { seed, ..cell.clone() };
            let outcome = run_experiment(&cfg).and_then(|a| on_run(&a, value, i).map(|_| a));
            match outcome {
                Ok(a) => {
                    for m in &a.methods {
                        let row = SweepRow {
                            axis_value: value.clone(),
                            repeat: Some(i),
                            seed: Some(seed),
                            method: m.method.name().into(),
                            rmse: m.metrics.rmse,
                            concentration_ratio: m.metrics.concentration_ratio,
                            gaussian_kl: m.metrics.kl_divergence,
                            weight_ess: m.metrics.weight_ess,
                            bytes_communicated: m.metrics.bytes_communicated as f64,
                            status: "ok".into(),
                        };
                        per_method.entry(row.method.clone()).or_default().push(row.clone());
                        result.rows.push(row);
                    }
                }
                Err(e) => {
                    log::error!("sweep {}={value} repeat {i} (seed {seed}): {e}", axis.name);
                    result.failures += 1;
                    result.rows.push(failed_row(value, Some(i), Some(seed), &e));
                }
            }
        }
        for (method, rows) in per_method {
            let n = rows.len() as f64;
            let mean = |f: fn(&SweepRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
            let ess: Option<Vec<f64>> = rows.iter().map(|r| r.weight_ess).collect();
            result.rows.push(SweepRow {
                axis_value: value.clone(),
                repeat: None,
                seed: None,
                method,
                rmse: mean(|r| r.rmse),
                concentration_ratio: mean(|r| r.concentration_ratio),
                gaussian_kl: mean(|r| r.gaussian_kl),
                weight_ess: ess.map(|v| v.iter().sum::<f64>() / n),
                bytes_communicated: mean(|r| r.bytes_communicated),
                status: format!("mean of {}", rows.len()),
            });
        }
    }
    Ok(result)
}

fn failed_row(value: &str, repeat: Option<usize>, seed: Option<u64>, e: &Error) -> SweepRow {
    SweepRow {
        axis_value: value.to_string(),
        repeat,
        seed,
        method: String::new(),
        rmse: f64::NAN,
        concentration_ratio: f64::NAN,
        gaussian_kl: f64::NAN,
        weight_ess: None,
        bytes_communicated: f64::NAN,
        status: format!("error: {e}"),
    }
}

/// Writes `sweep.csv`; the repeat column reads `mean` on aggregated rows.
pub fn write_sweep_csv(result: &SweepResult, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "axis",
        "value",
        "repeat",
        "seed",
        "method",
        "rmse_per_dim",
        "concentration_ratio",
        "gaussian_kl",
        "weight_ess",
        "bytes_communicated",
        "status",
    ])?;
    let f = |v: f64| if v.is_nan() { String::new() } else { format!("{v:.16e}") };
    for r in &result.rows {
        w.write_record([
            result.axis.clone(),
            r.axis_value.clone(),
            r.repeat.map_or_else(|| "mean".to_string(), |i| i.to_string()),
            r.seed.map(|s| s.to_string()).unwrap_or_default(),
            r.method.clone(),
            f(r.rmse),
            f(r.concentration_ratio),
            f(r.gaussian_kl),
            r.weight_ess.map(f).unwrap_or_default(),
            f(r.bytes_communicated),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_parsing() {
        let a = SweepAxis::parse("k=2,5,10").unwrap();
        assert_eq!(a, SweepAxis { name: "k".into(), values: vec!["2".into(), "5".into(), "10".into()] });
        let b = SweepAxis::parse("flow.hidden=[8,8],[16]").unwrap();
        assert_eq!(b.values, vec!["[8,8]", "[16]"]);
        assert!(SweepAxis::parse("k").is_err());
        assert!(SweepAxis::parse("k=1,,2").is_err());
    }

    #[test]
    fn axis_values_land_in_the_config() {
        let t = ExperimentConfig::from_toml_str("n = 200\nk = 2\ns = 100\nr = 50\n[model]\nkind = \"logistic_regression\"\n").unwrap();
        assert_eq!(apply_axis(&t, "k", "4").unwrap().k, 4);
        let c = apply_axis(&t, "model.p", "3").unwrap();
        assert_eq!(c.model.dim(), 4);
        assert_eq!(apply_axis(&t, "flow.hidden", "[8, 8]").unwrap().flow.hidden, vec![8, 8]);
        assert_eq!(apply_axis(&t, "nap_mode", "{ single = 1 }").unwrap().nap_mode, crate::aggregate::NapMode::Single(1));
        assert!(apply_axis(&t, "bogus", "1").is_err());
        assert!(apply_axis(&t, "k", "1000").is_err());
        assert_eq!(repeat_seed(7, 0), 7);
        assert_ne!(repeat_seed(7, 1), 7);
    }
}
