//! Comparison tables: CSV and Markdown for machines and notes, aligned
//! text for terminals.

use std::path::Path;

use dualshift_core::crossmix::Pairing;
use dualshift_core::metrics::aggregate;
use serde::{Deserialize, Serialize};

use crate::results::TableRow;
use crate::{io_err, Error, Result};

/// One line of a merged report. Column order is the field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub seed: Option<u64>,
    pub cbn: Option<bool>,
    pub da: Option<bool>,
    pub crossmix: Option<bool>,
    pub use_mass: Option<bool>,
    pub nonmass_train_ratio: Option<f64>,
    pub alpha: Option<f64>,
    pub pairing: Option<String>,
    pub mean_auc: f64,
    pub std_auc: f64,
    /// Per-fold AUCs joined with `;`.
    pub fold_auc: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Markdown,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "md" => Ok(Format::Markdown),
            other => Err(format!("unknown format `{other}` (expected csv or md)")),
        }
    }
}

fn pairing_name(p: Pairing) -> &'static str {
    match p {
        Pairing::SameMalignancy => "same_malignancy",
        Pairing::AcrossMalignancy => "across_malignancy",
    }
}

/// One row per result, plus a `mean` row (mean and population std of the
/// per-row means) when there are at least two.
pub fn merge(rows: &[TableRow]) -> Vec<ReportRow> {
    let mut out: Vec<ReportRow> = rows
        .iter()
        .map(|r| {
            let c = &r.result.config;
            ReportRow {
                label: r.label.clone(),
                seed: Some(r.result.seed),
                cbn: Some(c.cbn_enabled),
                da: Some(c.da_enabled),
                crossmix: Some(c.crossmix_enabled),
                use_mass: Some(c.use_mass),
                nonmass_train_ratio: Some(c.nonmass_train_ratio),
                alpha: Some(c.mix.alpha),
                pairing: Some(pairing_name(c.mix.pairing).to_string()),
                mean_auc: r.result.mean_auc,
                std_auc: r.result.std_auc,
                fold_auc: r
                    .result
                    .per_fold_auc
                    .iter()
                    .map(|a| a.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
            }
        })
        .collect();
    if out.len() >= 2 {
        let means: Vec<f64> = out.iter().map(|r| r.mean_auc).collect();
        let (mean_auc, std_auc) = aggregate(&means).expect("non-empty");
        out.push(ReportRow {
            label: "mean".into(),
            seed: None,
            cbn: None,
            da: None,
            crossmix: None,
            use_mass: None,
            nonmass_train_ratio: None,
            alpha: None,
            pairing: None,
            mean_auc,
            std_auc,
            fold_auc: String::new(),
        });
    }
    out
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer.serialize(row).expect("in-memory csv write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

pub fn read_csv(text: &str) -> std::result::Result<Vec<ReportRow>, csv::Error> {
    csv::Reader::from_reader(text.as_bytes()).deserialize().collect()
}

pub fn read_csv_file(path: &Path) -> Result<Vec<ReportRow>> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    read_csv(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

pub fn to_markdown(rows: &[ReportRow]) -> String {
    let header = [
        "label", "seed", "cbn", "da", "crossmix", "use_mass", "ratio", "alpha", "pairing", "AUC (%)",
    ];
    let mut text = format!("| {} |\n|{}\n", header.join(" | "), "---|".repeat(header.len()));
    for r in rows {
        let cells = [
            r.label.clone(),
            opt(&r.seed),
            opt(&r.cbn),
            opt(&r.da),
            opt(&r.crossmix),
            opt(&r.use_mass),
            opt(&r.nonmass_train_ratio),
            opt(&r.alpha),
            opt(&r.pairing),
            percent(r.mean_auc, r.std_auc),
        ];
        text.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    text
}

pub fn render(rows: &[ReportRow], format: Format) -> String {
    match format {
        Format::Csv => to_csv(rows),
        Format::Markdown => to_markdown(rows),
    }
}

/// `mean ± std` in percent with two decimals.
pub fn percent(mean: f64, std: f64) -> String {
    format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std)
}

/// Left-aligned first column, right-aligned others, two-space gaps.
pub fn aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let width = |i: usize| {
        rows.iter()
            .map(|r| r[i].chars().count())
            .chain([header[i].chars().count()])
            .max()
            .unwrap_or(0)
    };
    let widths: Vec<usize> = (0..header.len()).map(width).collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let pad = " ".repeat(widths[i] - c.chars().count());
                if i == 0 {
                    format!("{c}{pad}")
                } else {
                    format!("{pad}{c}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

fn mark(on: bool) -> String {
    if on { "✓" } else { "" }.to_string()
}

/// Module ablation layout: setting, the three module columns, AUC.
pub fn ablation_text(rows: &[TableRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let c = &r.result.config;
            vec![
                r.label.clone(),
                mark(c.cbn_enabled),
                mark(c.da_enabled),
                mark(c.crossmix_enabled),
                percent(r.result.mean_auc, r.result.std_auc),
            ]
        })
        .collect();
    aligned(&["Setting", "CBN", "DA", "CrossMix", "AUC (%)"], &body)
}

/// One row per α.
pub fn alpha_text(rows: &[TableRow]) -> String {
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                format!("{}", r.result.config.mix.alpha),
                percent(r.result.mean_auc, r.result.std_auc),
            ]
        })
        .collect();
    aligned(&["alpha", "AUC (%)"], &body)
}

/// Ratios as columns, one line per method, in first-seen order.
pub fn ratio_text(rows: &[TableRow]) -> String {
    let mut ratios: Vec<f64> = Vec::new();
    let mut methods: Vec<String> = Vec::new();
    for r in rows {
        let ratio = r.result.config.nonmass_train_ratio;
        if !ratios.contains(&ratio) {
            ratios.push(ratio);
        }
        let method = r.label.split(' ').next().unwrap_or_default().to_string();
        if !methods.contains(&method) {
            methods.push(method);
        }
    }
    let headers: Vec<String> = std::iter::once("Method".to_string())
        .chain(ratios.iter().map(|r| format!("{}%", (r * 100.0).round())))
        .collect();
    let body: Vec<Vec<String>> = methods
        .iter()
        .map(|m| {
            std::iter::once(m.clone())
                .chain(ratios.iter().map(|&ratio| {
                    rows.iter()
                        .find(|r| {
                            r.label.starts_with(m.as_str()) && r.result.config.nonmass_train_ratio == ratio
                        })
                        .map(|r| percent(r.result.mean_auc, r.result.std_auc))
                        .unwrap_or_default()
                }))
                .collect()
        })
        .collect();
    let header_refs: Vec<&str> = headers.iter().map(String::as_str).collect();
    aligned(&header_refs, &body)
}
