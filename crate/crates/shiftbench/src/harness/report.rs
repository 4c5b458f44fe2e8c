//! Long-form metric rows and their quartile summaries.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub shift_type: String,
    pub intensity: u32,
    pub metric: String,
    pub value: f64,
}

/// Quartiles plus extremes of one (method, metric, intensity) group across
/// shift types.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub metric: String,
    pub intensity: u32,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    pub summary: Vec<SummaryRow>,
    /// Free-form run metadata (fitted temperatures, NLL floor counts, ...).
    pub meta: BTreeMap<String, serde_json::Value>,
}

impl MetricReport {
    pub fn value(&self, method: &str, shift_type: &str, intensity: u32, metric: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| {
                r.method == method
                    && r.shift_type == shift_type
                    && r.intensity == intensity
                    && r.metric == metric
            })
            .map(|r| r.value)
    }
}

/// Linear-interpolation quantile of ascending `sorted` at fraction `p`.
pub fn quantile_linear(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 < n {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Summarize rows into per-(method, metric, intensity) quartile rows across
/// shift types. Groups are emitted in sorted key order.
pub fn summarize(rows: &[MetricRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, u32), Vec<f64>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((r.method.clone(), r.metric.clone(), r.intensity))
            .or_default()
            .push(r.value);
    }
    groups
        .into_iter()
        .map(|((method, metric, intensity), mut values)| {
            values.sort_by(|a, b| a.partial_cmp(b).unwrap());
            SummaryRow {
                method,
                metric,
                intensity,
                q25: quantile_linear(&values, 0.25),
                median: quantile_linear(&values, 0.5),
                q75: quantile_linear(&values, 0.75),
                min: values[0],
                max: *values.last().unwrap(),
            }
        })
        .collect()
}

pub fn write_report_csv(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut out = String::from("method,shift_type,intensity,metric,value\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.method, r.shift_type, r.intensity, r.metric, r.value
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_report_csv(path: &Path) -> Result<Vec<MetricRow>> {
    let body =
        fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut rows = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let err = |reason: String| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            reason,
        };
        if f.len() != 5 {
            return Err(err(format!("{} fields, expected 5", f.len())));
        }
        rows.push(MetricRow {
            method: f[0].to_string(),
            shift_type: f[1].to_string(),
            intensity: f[2].parse().map_err(|_| err("bad intensity".into()))?,
            metric: f[3].to_string(),
            value: f[4].parse().map_err(|_| err("bad value".into()))?,
        });
    }
    Ok(rows)
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut out = String::from("method,metric,intensity,q25,median,q75,min,max\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method, r.metric, r.intensity, r.q25, r.median, r.q75, r.min, r.max
        )
        .unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_of_one_two_three_four() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_linear(&v, 0.25), 1.75);
        assert_eq!(quantile_linear(&v, 0.5), 2.5);
        assert_eq!(quantile_linear(&v, 0.75), 3.25);
    }

    #[test]
    fn single_value_group_collapses() {
        let rows = vec![MetricRow {
            method: "m".into(),
            shift_type: "rotate".into(),
            intensity: 1,
            metric: "brier".into(),
            value: 0.42,
        }];
        let s = summarize(&rows);
        assert_eq!(s.len(), 1);
        for v in [s[0].q25, s[0].median, s[0].q75, s[0].min, s[0].max] {
            assert_eq!(v, 0.42);
        }
    }

    #[test]
    fn constant_group_collapses() {
        let rows: Vec<MetricRow> = ["a", "b", "c"]
            .iter()
            .map(|st| MetricRow {
                method: "m".into(),
                shift_type: st.to_string(),
                intensity: 0,
                metric: "ece".into(),
                value: 0.1,
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!(s[0].q25, 0.1);
        assert_eq!(s[0].max, 0.1);
    }

    #[test]
    fn quartile_ordering_invariants() {
        let rows: Vec<MetricRow> = [0.9, 0.1, 0.5, 0.7, 0.3]
            .iter()
            .enumerate()
            .map(|(i, &v)| MetricRow {
                method: "m".into(),
                shift_type: format!("s{i}"),
                intensity: 2,
                metric: "nll".into(),
                value: v,
            })
            .collect();
        let s = &summarize(&rows)[0];
        assert!(s.min <= s.q25);
        assert!(s.q25 <= s.median);
        assert!(s.median <= s.q75);
        assert!(s.q75 <= s.max);
    }

    #[test]
    fn groups_split_by_method_and_intensity() {
        let mut rows = Vec::new();
        for method in ["a", "b"] {
            for intensity in 0..2 {
                for st in ["rotate", "blur"] {
                    rows.push(MetricRow {
                        method: method.into(),
                        shift_type: st.into(),
                        intensity,
                        metric: "brier".into(),
                        value: 0.2,
                    });
                }
            }
        }
        assert_eq!(summarize(&rows).len(), 4);
    }

    #[test]
    fn report_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rows = vec![
            MetricRow {
                method: "vanilla".into(),
                shift_type: "rotate".into(),
                intensity: 3,
                metric: "brier".into(),
                value: 0.125,
            },
            MetricRow {
                method: "ens".into(),
                shift_type: "ood".into(),
                intensity: 0,
                metric: "mean_entropy".into(),
                value: 1.0986122886681098,
            },
        ];
        write_report_csv(&rows, &path).unwrap();
        let back = read_report_csv(&path).unwrap();
        assert_eq!(back, rows);
    }
}
