//! On-disk prediction format: CSV data file plus JSON sidecar manifest.
//!
//! The CSV header is `label,p0,...,p{K-1}` with optional `l0,...,l{K-1}`
//! logit columns; the label column holds -1 when labels are absent. Floats
//! are written as the shortest decimal that round-trips binary64, so
//! write-then-read reproduces a set bit-exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::prediction::{PredictionSet, SetMeta, ShiftTag};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Manifest {
    n: usize,
    k: usize,
    has_logits: bool,
    method: String,
    dataset: String,
    shift_type: String,
    shift_intensity: u32,
    seed: u64,
}

/// Sidecar manifest path for a prediction file.
pub fn manifest_path(path: &Path) -> PathBuf {
    path.with_extension("manifest.json")
}

pub fn write_predictions(set: &PredictionSet, path: &Path) -> Result<()> {
    let (n, k) = (set.n(), set.k());
    let mut out = String::new();
    out.push_str("label");
    for j in 0..k {
        write!(out, ",p{j}").unwrap();
    }
    if set.logits().is_some() {
        for j in 0..k {
            write!(out, ",l{j}").unwrap();
        }
    }
    out.push('\n');
    for i in 0..n {
        match set.labels() {
            Some(labels) => write!(out, "{}", labels[i]).unwrap(),
            None => out.push_str("-1"),
        }
        for &p in set.probs().row(i).iter() {
            write!(out, ",{p}").unwrap();
        }
        if let Some(logits) = set.logits() {
            for &z in logits.row(i).iter() {
                write!(out, ",{z}").unwrap();
            }
        }
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))?;

    let manifest = Manifest {
        n,
        k,
        has_logits: set.logits().is_some(),
        method: set.meta().method.clone(),
        dataset: set.meta().dataset.clone(),
        shift_type: set.meta().shift.kind.clone(),
        shift_intensity: set.meta().shift.intensity,
        seed: set.meta().seed,
    };
    let mpath = manifest_path(path);
    let body = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Parse {
            path: mpath.display().to_string(),
            line: 0,
            reason: e.to_string(),
        })?;
    fs::write(&mpath, body + "\n").map_err(|e| Error::io(mpath.display().to_string(), e))
}

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let pstr = path.display().to_string();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: pstr.clone(),
        line,
        reason,
    };

    let mpath = manifest_path(path);
    let mbody = fs::read_to_string(&mpath)
        .map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let manifest: Manifest = serde_json::from_str(&mbody).map_err(|e| Error::Parse {
        path: mpath.display().to_string(),
        line: 0,
        reason: e.to_string(),
    })?;

    let body = fs::read_to_string(path).map_err(|e| Error::io(pstr.clone(), e))?;
    let mut lines = body.lines();
    let header = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty file".into()))?;

    let k = manifest.k;
    let mut expect = String::from("label");
    for j in 0..k {
        write!(expect, ",p{j}").unwrap();
    }
    if manifest.has_logits {
        for j in 0..k {
            write!(expect, ",l{j}").unwrap();
        }
    }
    if header != expect {
        return Err(parse_err(
            1,
            format!("header `{header}` does not match manifest (expected `{expect}`)"),
        ));
    }

    let ncols = 1 + k + if manifest.has_logits { k } else { 0 };
    let mut probs = Vec::with_capacity(manifest.n * k);
    let mut logits = Vec::new();
    let mut raw_labels: Vec<i64> = Vec::with_capacity(manifest.n);
    let mut rows = 0usize;
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ncols {
            return Err(parse_err(
                lineno,
                format!("{} fields, expected {ncols}", fields.len()),
            ));
        }
        let label: i64 = fields[0]
            .parse()
            .map_err(|_| parse_err(lineno, format!("bad label `{}`", fields[0])))?;
        raw_labels.push(label);
        for (j, f) in fields[1..1 + k].iter().enumerate() {
            let v: f64 = f
                .parse()
                .map_err(|_| parse_err(lineno, format!("bad probability p{j} `{f}`")))?;
            probs.push(v);
        }
        if manifest.has_logits {
            for (j, f) in fields[1 + k..].iter().enumerate() {
                let v: f64 = f
                    .parse()
                    .map_err(|_| parse_err(lineno, format!("bad logit l{j} `{f}`")))?;
                logits.push(v);
            }
        }
        rows += 1;
    }
    if rows != manifest.n {
        return Err(parse_err(
            0,
            format!("{rows} data rows, manifest says {}", manifest.n),
        ));
    }

    let labels = if raw_labels.iter().all(|&y| y == -1) {
        None
    } else {
        let mut out = Vec::with_capacity(rows);
        for (i, &y) in raw_labels.iter().enumerate() {
            if y < 0 {
                return Err(parse_err(
                    i + 2,
                    format!("label {y} in a labeled file (all labels must be -1 or all valid)"),
                ));
            }
            out.push(y as usize);
        }
        Some(out)
    };

    let probs = ndarray::Array2::from_shape_vec((rows, k), probs)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let logits = if manifest.has_logits {
        Some(
            ndarray::Array2::from_shape_vec((rows, k), logits)
                .map_err(|e| parse_err(0, e.to_string()))?,
        )
    } else {
        None
    };

    let meta = SetMeta::new(
        &manifest.method,
        &manifest.dataset,
        ShiftTag {
            kind: manifest.shift_type.clone(),
            intensity: manifest.shift_intensity,
        },
        manifest.seed,
    );
    PredictionSet::new(probs, labels, logits, meta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn meta() -> SetMeta {
        SetMeta::new("m", "d", ShiftTag::none(), 1)
    }

    #[test]
    fn smallest_legal_set_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set =
            PredictionSet::new(array![[0.5, 0.5]], Some(vec![1]), None, meta()).unwrap();
        write_predictions(&set, &path).unwrap();
        let body = fs::read_to_string(&path).unwrap();
        assert_eq!(body, "label,p0,p1\n1,0.5,0.5\n");
        let manifest = fs::read_to_string(manifest_path(&path)).unwrap();
        assert!(manifest.contains("\"k\": 2"));
    }

    #[test]
    fn round_trip_with_logits_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        // 17-significant-digit values survive the trip.
        let logits = array![
            [0.123456789012345_69, -1.0, 2.5, 0.0],
            [1e-9, 3.333333333333333, -0.7, 0.25],
            [-2.0, -2.0, -2.0, -2.0]
        ];
        let set = PredictionSet::from_logits(logits, Some(vec![2, 0, 3]), meta()).unwrap();
        write_predictions(&set, &path).unwrap();
        let back = read_predictions(&path).unwrap();
        assert_eq!(&back, &set);
    }

    #[test]
    fn label_free_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = PredictionSet::new(array![[0.25, 0.75]], None, None, meta()).unwrap();
        write_predictions(&set, &path).unwrap();
        let back = read_predictions(&path).unwrap();
        assert!(back.labels().is_none());
        assert_eq!(&back, &set);
    }

    #[test]
    fn bad_row_sum_reports_row() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = PredictionSet::new(array![[0.5, 0.5]], Some(vec![0]), None, meta()).unwrap();
        write_predictions(&set, &path).unwrap();
        let body = "label,p0,p1\n0,0.5,0.48\n";
        fs::write(&path, body).unwrap();
        match read_predictions(&path).unwrap_err() {
            Error::InvalidRow { row, reason } => {
                assert_eq!(row, 0);
                assert!(reason.contains("sums"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn out_of_range_label_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = PredictionSet::new(
            array![[0.2, 0.3, 0.5]],
            Some(vec![0]),
            None,
            meta(),
        )
        .unwrap();
        write_predictions(&set, &path).unwrap();
        fs::write(&path, "label,p0,p1,p2\n5,0.2,0.3,0.5\n").unwrap();
        let err = read_predictions(&path).unwrap_err();
        assert!(err.to_string().contains("label 5"));
    }

    #[test]
    fn header_manifest_mismatch_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let set = PredictionSet::new(array![[0.5, 0.5]], Some(vec![0]), None, meta()).unwrap();
        write_predictions(&set, &path).unwrap();
        fs::write(&path, "label,p0\n0,1.0\n").unwrap();
        let err = read_predictions(&path).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }
}
