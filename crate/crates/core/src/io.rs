//! File formats. Everything on disk is 1-based.
//!
//! * dataset CSV: `item,annotator,label`, one present response per row
//! * ground truth CSV: `item,label`
//! * predictions CSV: `item,label,posterior_1,..,posterior_K` (label may be empty)
//! * model file: JSON with `k`, `m`, `prior` and `confusions`, where
//!   `confusions[m][k]` is column `k` of annotator `m`'s confusion matrix

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{LabelDataset, ModelEstimate, Response};
use crate::error::{Error, Result};

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn open_csv(path: &Path, expected: &[&str]) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(file);
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    if headers.len() < expected.len()
        || headers.iter().zip(expected).any(|(h, e)| h != *e)
    {
        return Err(parse_err(
            path,
            1,
            format!("expected header `{}`, got `{}`", expected.join(","), headers.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    Ok(rdr)
}

fn parse_index(path: &Path, line: usize, field: &str, what: &str) -> Result<usize> {
    let v: usize = field
        .parse()
        .map_err(|_| parse_err(path, line, format!("{what} `{field}` is not a non-negative integer")))?;
    if v == 0 {
        return Err(parse_err(path, line, format!("{what} must be >= 1 (0 is reserved for absence)")));
    }
    Ok(v - 1)
}

/// Raw 1-based rows from a dataset CSV, converted to 0-based responses.
pub fn read_responses(path: &Path) -> Result<Vec<Response>> {
    let mut rdr = open_csv(path, &["item", "annotator", "label"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 3 {
            return Err(parse_err(path, line, format!("expected 3 fields, got {}", rec.len())));
        }
        out.push(Response {
            item: parse_index(path, line, &rec[0], "item")?,
            annotator: parse_index(path, line, &rec[1], "annotator")?,
            label: parse_index(path, line, &rec[2], "label")?,
        });
    }
    Ok(out)
}

/// Loads a dataset with `k` classes. Item and annotator counts default to
/// the largest index present; when declared they must cover the payload.
pub fn load_dataset(
    path: &Path,
    k: usize,
    n_items: Option<usize>,
    n_annotators: Option<usize>,
) -> Result<LabelDataset> {
    let responses = read_responses(path)?;
    let max_item = responses.iter().map(|r| r.item + 1).max().unwrap_or(0);
    let max_annot = responses.iter().map(|r| r.annotator + 1).max().unwrap_or(0);
    let n = resolve_dim(n_items, max_item, "item")?;
    let m = resolve_dim(n_annotators, max_annot, "annotator")?;
    if responses.is_empty() && (n == 0 || m == 0) {
        return Err(Error::InvalidDataset(format!("{}: no responses", path.display())));
    }
    LabelDataset::new(n, m, k, responses)
}

fn resolve_dim(declared: Option<usize>, observed: usize, what: &str) -> Result<usize> {
    match declared {
        Some(d) if d < observed => Err(Error::DimensionMismatch(format!(
            "declared {d} {what}s but data references {what} {observed}"
        ))),
        Some(d) => Ok(d),
        None => Ok(observed),
    }
}

pub fn save_dataset(dataset: &LabelDataset, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("item,annotator,label\n");
    for r in dataset.responses() {
        body.push_str(&format!("{},{},{}\n", r.item + 1, r.annotator + 1, r.label + 1));
    }
    w.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

/// Ground truth as (0-based item, 0-based label) pairs in file order.
pub fn load_truth(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut rdr = open_csv(path, &["item", "label"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() != 2 {
            return Err(parse_err(path, line, format!("expected 2 fields, got {}", rec.len())));
        }
        out.push((
            parse_index(path, line, &rec[0], "item")?,
            parse_index(path, line, &rec[1], "label")?,
        ));
    }
    Ok(out)
}

pub fn save_truth(labels: &[usize], path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("item,label\n");
    for (n, l) in labels.iter().enumerate() {
        body.push_str(&format!("{},{}\n", n + 1, l + 1));
    }
    w.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

/// One predicted row: 0-based item, optional 0-based label, posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub item: usize,
    pub label: Option<usize>,
    pub posterior: Vec<f64>,
}

pub fn save_predictions(rows: &[PredictionRow], k: usize, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    let mut body = String::from("item,label");
    for c in 1..=k {
        body.push_str(&format!(",posterior_{c}"));
    }
    body.push('\n');
    for row in rows {
        body.push_str(&(row.item + 1).to_string());
        body.push(',');
        if let Some(l) = row.label {
            body.push_str(&(l + 1).to_string());
        }
        for p in &row.posterior {
            body.push_str(&format!(",{p:e}"));
        }
        body.push('\n');
    }
    w.write_all(body.as_bytes()).map_err(|e| io_err(path, e))?;
    w.flush().map_err(|e| io_err(path, e))
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    let mut rdr = open_csv(path, &["item", "label"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| parse_err(path, line, e.to_string()))?;
        if rec.len() < 2 {
            return Err(parse_err(path, line, "expected at least 2 fields"));
        }
        let label = if rec[1].is_empty() {
            None
        } else {
            Some(parse_index(path, line, &rec[1], "label")?)
        };
        let posterior = rec
            .iter()
            .skip(2)
            .map(|f| f.parse::<f64>().map_err(|_| parse_err(path, line, format!("bad posterior `{f}`"))))
            .collect::<Result<Vec<_>>>()?;
        out.push(PredictionRow {
            item: parse_index(path, line, &rec[0], "item")?,
            label,
            posterior,
        });
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    k: usize,
    m: usize,
    prior: Vec<f64>,
    confusions: Vec<Vec<Vec<f64>>>,
}

/// Serializes a model to its JSON document.
pub fn model_to_string(model: &ModelEstimate) -> String {
    let doc = ModelFile {
        k: model.k(),
        m: model.n_annotators(),
        prior: model.prior().probs().iter().copied().collect(),
        confusions: model
            .confusions()
            .iter()
            .map(|a| a.matrix().column_iter().map(|c| c.iter().copied().collect()).collect())
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("model serializes");
    s.push('\n');
    s
}

pub fn model_from_str(s: &str) -> Result<ModelEstimate> {
    let doc: ModelFile =
        serde_json::from_str(s).map_err(|e| Error::InvalidModel(format!("malformed model file: {e}")))?;
    let k = doc.k;
    if doc.prior.len() != k {
        return Err(Error::DimensionMismatch(format!("prior has {} entries, k = {k}", doc.prior.len())));
    }
    if doc.confusions.len() != doc.m {
        return Err(Error::DimensionMismatch(format!(
            "{} confusion matrices, m = {}",
            doc.confusions.len(),
            doc.m
        )));
    }
    let mut mats = Vec::with_capacity(doc.m);
    for (m, cols) in doc.confusions.iter().enumerate() {
        if cols.len() != k || cols.iter().any(|c| c.len() != k) {
            return Err(Error::DimensionMismatch(format!(
                "confusion matrix {} is not {k}x{k}",
                m + 1
            )));
        }
        mats.push(DMatrix::from_fn(k, k, |r, c| cols[c][r]));
    }
    ModelEstimate::from_parts(mats, DVector::from_vec(doc.prior))
}

pub fn save_model(model: &ModelEstimate, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_string(model)).map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<ModelEstimate> {
    let s = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    model_from_str(&s)
}
