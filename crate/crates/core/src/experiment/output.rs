use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::run::RunArtifacts;
use crate::error::Result;
use crate::linalg::Matrix;

/// Fixed column order of `metrics.csv`.
pub const METRICS_COLUMNS: [&str; 15] = [
    "config_hash",
    "model",
    "method",
    "n",
    "k",
    "s",
    "t",
    "r",
    "seed",
    "rmse_per_dim",
    "concentration_ratio",
    "gaussian_kl",
    "weight_ess",
    "bytes_communicated",
    "sample_shipping_bytes",
];

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// One `metrics.csv` record per method, in [`METRICS_COLUMNS`] order.
pub fn metrics_records(a: &RunArtifacts) -> Vec<Vec<String>> {
    let c = &a.config;
    a.methods
        .iter()
        .map(|m| {
            vec![
                a.config_hash.clone(),
                c.model.name().to_string(),
                m.method.name().to_string(),
                c.n.to_string(),
                c.k.to_string(),
                c.s.to_string(),
                c.candidates().to_string(),
                c.r.to_string(),
                c.seed.to_string(),
                fmt_f64(m.metrics.rmse),
                fmt_f64(m.metrics.concentration_ratio),
                fmt_f64(m.metrics.kl_divergence),
                m.metrics.weight_ess.map(fmt_f64).unwrap_or_default(),
                m.metrics.bytes_communicated.to_string(),
                a.communication.sample_bytes.to_string(),
            ]
        })
        .collect()
}

fn write_matrix(path: &Path, header: &[String], m: &Matrix) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in m.iter_rows() {
        w.write_record(row.iter().map(|v| fmt_f64(*v)))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the run's artifacts under `dir`:
///
/// - `metrics.csv`, one row per method (deterministic; no wall times),
/// - `samples_<method>.csv` and `samples_ground_truth.csv`,
/// - `plots/<method>.svg` scatter overlays for two-parameter models,
/// - `blobs/shard_<k>.nvp`, the serialized flows,
/// - `data.csv`,
/// - `manifest.toml`: config hash, the other files, the config and per-stage wall times.
///
/// Every CSV is a deterministic function of the config.
///
/// Returns the paths written.
pub fn emit_results(a: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let names = a.config.model.param_names();

    let path = dir.join("metrics.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(METRICS_COLUMNS)?;
    for rec in metrics_records(a) {
        w.write_record(rec)?;
    }
    w.flush()?;
    written.push(path);

    for m in &a.methods {
        let path = dir.join(format!("samples_{}.csv", m.method.name()));
        write_matrix(&path, &names, &m.samples.values)?;
        written.push(path);
    }
    let path = dir.join("samples_ground_truth.csv");
    write_matrix(&path, &names, &a.ground_truth.values)?;
    written.push(path);

    if names.len() == 2 {
        fs::create_dir_all(dir.join("plots"))?;
        for m in &a.methods {
            let path = dir.join("plots").join(format!("{}.svg", m.method.name()));
            let title = format!("{} vs ground truth ({})", m.method.name(), a.config.model.name());
            fs::write(&path, scatter_svg(&a.ground_truth.values, &m.samples.values, &names, &title))?;
            written.push(path);
        }
    }

    fs::create_dir_all(dir.join("blobs"))?;
    for (k, s) in a.shards.iter().enumerate() {
        let path = dir.join("blobs").join(format!("shard_{k}.nvp"));
        fs::write(&path, &s.blob)?;
        written.push(path);
    }

    let path = dir.join("data.csv");
    a.data.write_csv(fs::File::create(&path)?)?;
    written.push(path);

    // Top-level keys must precede the config's tables.
    let path = dir.join("manifest.toml");
    let files: Vec<String> =
        written.iter().filter_map(|p| p.strip_prefix(dir).ok()).map(|p| format!("{:?}", p.to_string_lossy())).collect();
    fs::write(
        &path,
        format!(
            "config_hash = \"{}\"\nfiles = [{}]\n\n{}\n{}",
            a.config_hash,
            files.join(", "),
            a.config.to_toml_string(),
            timings_table(&a.timings)
        ),
    )?;
    written.push(path);
    Ok(written)
}

/// Wall times live only in the manifest so that every CSV is a pure function of the config.
fn timings_table(timings: &[(String, f64)]) -> String {
    let mut t = toml::Table::new();
    for (stage, secs) in timings {
        t.insert(stage.clone(), toml::Value::Float(*secs));
    }
    let mut root = toml::Table::new();
    root.insert("timings".into(), toml::Value::Table(t));
    toml::to_string(&root).expect("plain table serializes")
}

/// Scatter overlay of the first two columns: ground truth in class `truth`, approximation in class `approx`.
pub fn scatter_svg(truth: &Matrix, approx: &Matrix, names: &[String], title: &str) -> String {
    const SIZE: f64 = 480.0;
    const PAD: f64 = 40.0;
    let finite_cols = |c: usize| {
        truth.column(c).into_iter().chain(approx.column(c)).filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let (x0, x1) = finite_cols(0);
    let (y0, y1) = finite_cols(1);
    let span = |lo: f64, hi: f64| if hi > lo { hi - lo } else { 1.0 };
    let (sx, sy) = (span(x0, x1), span(y0, y1));
    let px = |x: f64| PAD + (x - x0) / sx * (SIZE - 2.0 * PAD);
    let py = |y: f64| SIZE - PAD - (y - y0) / sy * (SIZE - 2.0 * PAD);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    let _ = writeln!(
        s,
        "<style>.truth{{fill:#1f77b4;fill-opacity:0.35}} .approx{{fill:#d62728;fill-opacity:0.35}} text{{font:12px sans-serif}}</style>"
    );
    let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{w}" height="{w}" fill="none" stroke="gray"/>"#, w = SIZE - 2.0 * PAD);
    let _ = writeln!(s, r#"<text x="{PAD}" y="20">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, SIZE / 2.0, SIZE - 10.0, escape(&names[0]));
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(&names[1])
    );
    for (class, m) in [("truth", truth), ("approx", approx)] {
        let _ = writeln!(s, r#"<g class="{class}">"#);
        for row in m.iter_rows().filter(|r| r[0].is_finite() && r[1].is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.6"/>"#, px(row[0]), py(row[1]));
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
