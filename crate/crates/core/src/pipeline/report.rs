//! The report bundle: CSV tables, JSON summaries and scatter plots, written
//! to a staging directory and moved into place in one rename.
//!
//! Floats use Rust's shortest round-trip formatting, so tables reloaded from
//! CSV reproduce the in-memory values exactly. Nothing in the bundle depends
//! on wall time or worker count.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::study::{sha256_hex, SampleInfo, StudyReport};
use crate::explain::ImportanceProfile;
use crate::error::{Error, Result};
use crate::features::{StructuralFeatures, FEATURE_NAMES};
use crate::kge::ModelKind;
use crate::stats::{CorrelationMethod, CorrelationTable, ExperimentRecord};

pub const REPORT_DIR: &str = "report";
const STAGING_DIR: &str = ".report-staging";
const RETIRED_DIR: &str = ".report-old";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub bytes: usize,
    pub sha256: String,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| Error::Numeric(format!("csv buffer: {e}")))
}

pub fn json_bytes<T: Serialize + ?Sized>(v: &T) -> Result<Vec<u8>> {
    let mut b = serde_json::to_vec_pretty(v)?;
    b.push(b'\n');
    Ok(b)
}

pub fn features_csv(samples: &[SampleInfo]) -> Result<Vec<u8>> {
    let mut header = vec![
        "sample_index",
        "seed",
        "nodes",
        "train",
        "valid",
        "test",
        "requested_ratio",
        "achieved_ratio",
        "exhausted",
        "excluded",
    ];
    header.extend(FEATURE_NAMES);
    header.extend(["train_1-1", "train_1-n", "train_n-1", "train_n-n"]);
    let rows = samples.iter().map(|s| {
        let mut r = vec![
            s.index.to_string(),
            s.seed.to_string(),
            s.nodes.to_string(),
        ];
        r.extend(s.triples.values().map(|c| c.to_string()));
        r.extend([
            s.requested_ratio.to_string(),
            s.achieved_ratio.to_string(),
            s.exhausted.to_string(),
            s.excluded.clone().unwrap_or_default(),
        ]);
        match &s.features {
            Some(f) => r.extend(feature_cells(f)),
            None => r.extend(std::iter::repeat_n(String::new(), FEATURE_NAMES.len())),
        }
        match &s.category_counts {
            Some(c) => r.extend(c.iter().map(|v| v.to_string())),
            None => r.extend(std::iter::repeat_n(String::new(), 4)),
        }
        r
    });
    csv_bytes(&header, rows)
}

fn feature_cells(f: &StructuralFeatures) -> Vec<String> {
    vec![
        f.category_gini.to_string(),
        f.relation_type_gini.to_string(),
        f.degree_gini.to_string(),
        f.density.to_string(),
        f.scc_count.to_string(),
        f.global_clustering.to_string(),
    ]
}

pub fn records_csv(records: &[ExperimentRecord]) -> Result<Vec<u8>> {
    let mut header = vec!["sample_index", "model"];
    header.extend(FEATURE_NAMES);
    header.push("mrr");
    let rows = records.iter().map(|r| {
        let mut row = vec![r.sample_index.to_string(), r.model.name().to_owned()];
        row.extend(feature_cells(&r.features));
        row.push(r.mrr.to_string());
        row
    });
    csv_bytes(&header, rows)
}

/// Parses a `records.csv` produced by [`records_csv`].
pub fn read_records_csv(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let bad = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| bad(1, format!("missing column {name}")));
    let (si, mi, yi) = (col("sample_index")?, col("model")?, col("mrr")?);
    let fi: Vec<usize> = FEATURE_NAMES.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| bad(line, format!("column {}: {e}", header[i])))
        };
        let mut a = [0.0; 6];
        for (slot, &i) in a.iter_mut().zip(&fi) {
            *slot = num(i)?;
        }
        out.push(ExperimentRecord {
            sample_index: rec[si].parse().map_err(|e| bad(line, format!("sample_index: {e}")))?,
            model: rec[mi].parse().map_err(|e: Error| bad(line, e.to_string()))?,
            features: StructuralFeatures::from_array(a),
            mrr: num(yi)?,
        });
    }
    Ok(out)
}

/// Rows are (feature, method), one column per model.
pub fn correlation_csv(table: &CorrelationTable) -> Result<Vec<u8>> {
    let mut header = vec!["feature", "method"];
    header.extend(table.models.iter().map(|m| m.name()));
    let mut rows = Vec::new();
    for f in FEATURE_NAMES {
        for method in CorrelationMethod::ALL {
            let mut r = vec![f.to_owned(), method.name().to_owned()];
            r.extend(table.models.iter().map(|&m| opt(table.get(f, method, m).and_then(|e| e.value))));
            rows.push(r);
        }
    }
    csv_bytes(&header, rows)
}

fn fig4_csv(report: &StudyReport) -> Result<Vec<u8>> {
    csv_bytes(
        &["model", "category", "train_triples", "test_triples", "mrr"],
        report.categories.iter().map(|r| {
            vec![
                r.model.name().to_owned(),
                r.category.label().to_owned(),
                r.train_triples.to_string(),
                r.test_triples.to_string(),
                opt(r.mrr),
            ]
        }),
    )
}

fn fig5_csv(report: &StudyReport, model: ModelKind) -> Result<Option<Vec<u8>>> {
    let Some(rows) = &report.grid else { return Ok(None) };
    csv_bytes(
        &["model", "axis", "value", "category", "mrr", "test_triples"],
        rows.iter().map(|r| {
            vec![
                model.name().to_owned(),
                r.axis.name().to_owned(),
                r.value.to_string(),
                r.category.label().to_owned(),
                r.mrr.to_string(),
                r.count.to_string(),
            ]
        }),
    )
    .map(Some)
}

pub fn fig6_csv(profile: &ImportanceProfile) -> Result<Vec<u8>> {
    csv_bytes(
        &["category", "group", "i_head", "i_relation", "i_tail", "group_size"],
        profile.rows.iter().map(|r| {
            vec![
                r.category.label().to_owned(),
                r.group.name().to_owned(),
                r.i_head.to_string(),
                r.i_relation.to_string(),
                r.i_tail.to_string(),
                r.group_size.to_string(),
            ]
        }),
    )
}

/// One JSON file per explained triple, keyed `lime/triple-iii.json`.
pub fn lime_files(profile: &ImportanceProfile) -> Result<BTreeMap<String, Vec<u8>>> {
    profile
        .explanations
        .iter()
        .enumerate()
        .map(|(k, e)| Ok((format!("lime/triple-{k:03}.json"), json_bytes(e)?)))
        .collect()
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Scatter of one feature (x) against MRR (y), one series per model.
pub fn scatter_svg(feature: &str, records: &[ExperimentRecord], models: &[ModelKind]) -> String {
    let fi = FEATURE_NAMES.iter().position(|f| *f == feature).expect("known feature");
    let xs: Vec<f64> = records.iter().map(|r| r.features.to_array()[fi]).collect();
    let (mut lo, mut hi) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let (w, h, left, right, top, bottom) = (480.0, 360.0, 60.0, 20.0, 30.0, 50.0);
    let px = |x: f64| left + (x - lo) / (hi - lo) * (w - left - right);
    let py = |y: f64| h - bottom - y.clamp(0.0, 1.0) * (h - top - bottom);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, "<title>{feature} vs MRR</title>");
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (left, w - right, h - bottom, top);
    let _ = writeln!(s, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    let _ = writeln!(s, r#"<text x="{x0}" y="{:.1}" font-size="11">{lo:.4}</text>"#, y0 + 16.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{:.1}" font-size="11" text-anchor="end">{hi:.4}</text>"#, y0 + 16.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{feature}</text>"#, (x0 + x1) / 2.0, h - 10.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{y0}" font-size="11" text-anchor="end">0</text>"#, x0 - 6.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">1</text>"#, x0 - 6.0, y1 + 4.0);
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 15 {:.1})">MRR</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    for (k, m) in models.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let _ = writeln!(s, r#"<g class="series" data-model="{}" fill="{color}">"#, m.name());
        for r in records.iter().filter(|r| r.model == *m) {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
                px(r.features.to_array()[fi]),
                py(r.mrr)
            );
        }
        let ly = top + 14.0 * k as f64;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}" font-size="11" text-anchor="end">{}</text>"#, w - right, m.name());
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}

/// All bundle files except `manifest.json`, keyed by relative path.
pub fn render_files(report: &StudyReport) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    files.insert("features.csv".to_owned(), features_csv(&report.samples)?);
    files.insert("records.csv".to_owned(), records_csv(&report.records)?);
    if let Some(t) = &report.correlation {
        files.insert("correlation.csv".to_owned(), correlation_csv(t)?);
    }
    if !report.sobol.is_empty() {
        files.insert("sobol.json".to_owned(), json_bytes(&report.sobol)?);
    }
    files.insert("fig4.csv".to_owned(), fig4_csv(report)?);
    let grid_model = report
        .manifest
        .config
        .pointer("/grid/model")
        .and_then(|v| v.as_str())
        .and_then(|s| s.parse::<ModelKind>().ok());
    if let Some(m) = grid_model {
        if let Some(b) = fig5_csv(report, m)? {
            files.insert("fig5.csv".to_owned(), b);
        }
    }
    if let Some(p) = &report.lime {
        files.insert("fig6.csv".to_owned(), fig6_csv(p)?);
        files.extend(lime_files(p)?);
    }
    let models: Vec<ModelKind> = {
        let mut m: Vec<ModelKind> = report.records.iter().map(|r| r.model).collect();
        m.sort();
        m.dedup();
        m
    };
    for f in FEATURE_NAMES {
        files.insert(format!("scatter-{f}.svg"), scatter_svg(f, &report.records, &models).into_bytes());
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        records: &'a [ExperimentRecord],
        correlation: &'a Option<CorrelationTable>,
        categories: &'a [super::study::CategoryRow],
        stages: &'a BTreeMap<String, super::study::StageStatus>,
        lime_profile: Option<&'a [crate::explain::ProfileRow]>,
    }
    files.insert(
        "report.json".to_owned(),
        json_bytes(&Summary {
            records: &report.records,
            correlation: &report.correlation,
            categories: &report.categories,
            stages: &report.manifest.stages,
            lime_profile: report.lime.as_ref().map(|p| p.rows.as_slice()),
        })?,
    );
    Ok(files)
}

/// Writes the bundle to `out_dir/report/` via a staging directory and
/// returns the file index (also embedded in `manifest.json`).
pub fn emit_report(report: &StudyReport, out_dir: &Path) -> Result<Vec<FileEntry>> {
    let files = render_files(report)?;
    let index: Vec<FileEntry> = files
        .iter()
        .map(|(p, b)| FileEntry {
            path: p.clone(),
            bytes: b.len(),
            sha256: sha256_hex(b),
        })
        .collect();
    #[derive(Serialize)]
    struct ManifestFile<'a> {
        #[serde(flatten)]
        manifest: &'a super::study::Manifest,
        files: &'a [FileEntry],
    }
    let manifest = json_bytes(&ManifestFile {
        manifest: &report.manifest,
        files: &index,
    })?;

    let staging = out_dir.join(STAGING_DIR);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    for (p, b) in files.iter().chain([(&"manifest.json".to_owned(), &manifest)]) {
        let path = staging.join(p);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(&path, b).map_err(|e| Error::io(&path, e))?;
    }
    let target = out_dir.join(REPORT_DIR);
    let retired = out_dir.join(RETIRED_DIR);
    if retired.exists() {
        fs::remove_dir_all(&retired).map_err(|e| Error::io(&retired, e))?;
    }
    if target.exists() {
        fs::rename(&target, &retired).map_err(|e| Error::io(&target, e))?;
    }
    fs::rename(&staging, &target).map_err(|e| Error::io(&target, e))?;
    if retired.exists() {
        fs::remove_dir_all(&retired).map_err(|e| Error::io(&retired, e))?;
    }
    Ok(index)
}

