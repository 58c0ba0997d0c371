use std::fmt::Write as _;
use std::path::Path;

use serde_json::json;

use super::{ExperimentConfig, ExperimentResult, MetricRow};
use crate::error::{Error, Result};
use crate::estimators::{write_trace_csv, Method};
use crate::forward::{bmode, write_pgm};
use crate::metrics::Metrics;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub mean: Metrics,
    pub median: Metrics,
    pub max: Metrics,
}

fn fields(m: &Metrics) -> [f64; 4] {
    [m.delta_i, m.delta_snr, m.delta_cnr, m.kl_mean]
}

fn from_fields(v: [f64; 4]) -> Metrics {
    Metrics {
        delta_i: v[0],
        delta_snr: v[1],
        delta_cnr: v[2],
        kl_mean: v[3],
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean, median and max of every metric, per method, in first-seen order.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut methods: Vec<Method> = Vec::new();
    for r in rows {
        if !methods.contains(&r.method) {
            methods.push(r.method);
        }
    }
    methods
        .into_iter()
        .map(|method| {
            let per: Vec<[f64; 4]> = rows.iter().filter(|r| r.method == method).map(|r| fields(&r.metrics)).collect();
            let n = per.len() as f64;
            let col = |j: usize| per.iter().map(|f| f[j]).collect::<Vec<_>>();
            SummaryRow {
                method,
                mean: from_fields(std::array::from_fn(|j| col(j).iter().sum::<f64>() / n)),
                median: from_fields(std::array::from_fn(|j| median(col(j)))),
                max: from_fields(std::array::from_fn(|j| col(j).into_iter().fold(f64::NEG_INFINITY, f64::max))),
            }
        })
        .collect()
}

pub(crate) fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = String::from("method,transform_value,delta_I,delta_SNR,delta_CNR,KL_mean\n");
    for r in rows {
        let m = &r.metrics;
        let _ = writeln!(
            s,
            "{},{},{:.8},{:.8},{:.8},{:.8}",
            r.method, r.value, m.delta_i, m.delta_snr, m.delta_cnr, m.kl_mean
        );
    }
    s
}

pub(crate) fn summary_csv(summary: &[SummaryRow]) -> String {
    let mut s = String::from("method");
    for metric in ["delta_I", "delta_SNR", "delta_CNR", "KL"] {
        for stat in ["mean", "median", "max"] {
            let _ = write!(s, ",{metric}_{stat}");
        }
    }
    s.push('\n');
    for row in summary {
        s.push_str(row.method.name());
        for j in 0..4 {
            for m in [&row.mean, &row.median, &row.max] {
                let _ = write!(s, ",{:.8}", fields(m)[j]);
            }
        }
        s.push('\n');
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Write CSVs, the RLAD trace, the gallery, the resolved config and a
/// manifest into `dir`.
pub fn write_outputs(result: &ExperimentResult, cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    write(&dir.join("metrics.csv"), &metrics_csv(&result.rows))?;
    write(&dir.join("summary.csv"), &summary_csv(&result.summary()))?;
    if !result.aliasing.is_empty() {
        let mut s = String::from("transform_value,energy_above_band,aliased\n");
        for a in &result.aliasing {
            let _ = writeln!(s, "{},{:.8},{}", a.value, a.energy_above_band, a.flagged);
        }
        write(&dir.join("trf_aliasing.csv"), &s)?;
    }
    if !result.rlad_trace.is_empty() {
        write_trace_csv(&result.rlad_trace, dir.join("rlad_trace.csv"))?;
    }
    let mut images = Vec::new();
    if !result.gallery.is_empty() {
        let gdir = dir.join("gallery");
        std::fs::create_dir_all(&gdir).map_err(|e| Error::file(&gdir, e))?;
        for entry in &result.gallery {
            let mut save = |name: String, env: &crate::field::EnvelopeImage| -> Result<()> {
                let path = gdir.join(&name);
                write_pgm(&bmode(env, cfg.gallery.dynamic_range_db)?, &path)?;
                images.push(format!("gallery/{name}"));
                Ok(())
            };
            save(format!("truth_{}.pgm", entry.value), &entry.truth)?;
            for (method, env) in &entry.methods {
                save(format!("{method}_{}.pgm", entry.value), env)?;
            }
        }
    }
    let config_text = cfg.to_toml();
    write(&dir.join("config.toml"), &config_text)?;
    let manifest = json!({
        "command": "experiment",
        "kind": cfg.kind,
        "seed": cfg.seed,
        "deterministic": cfg.deterministic,
        "config_hash": result.config_hash,
        "config_file": "config.toml",
        "weights": cfg.weights,
        "weights_sha256": result.weights_hash,
        "sweep": result.values,
        "methods": cfg.methods,
        "evaluated_pixels": result.mask_pixels,
        "gallery": images,
        "version": env!("CARGO_PKG_VERSION"),
    });
    let text = serde_json::to_string_pretty(&manifest)?;
    write(&dir.join("manifest.json"), &text)
}
