use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Metric {
    Sam,
    Ergas,
    Scc,
    Q2n,
    DLambda,
    Ds,
    Qnr,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Sam,
        Metric::Ergas,
        Metric::Scc,
        Metric::Q2n,
        Metric::DLambda,
        Metric::Ds,
        Metric::Qnr,
    ];

    pub fn column(self) -> &'static str {
        match self {
            Metric::Sam => "sam",
            Metric::Ergas => "ergas",
            Metric::Scc => "scc",
            Metric::Q2n => "q2n",
            Metric::DLambda => "d_lambda",
            Metric::Ds => "d_s",
            Metric::Qnr => "qnr",
        }
    }

    /// True when smaller values are better.
    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Sam | Metric::Ergas | Metric::DLambda | Metric::Ds)
    }

    fn index(self) -> usize {
        Metric::ALL.iter().position(|m| *m == self).unwrap()
    }
}

/// Scores of one method on one image; absent metrics are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub method: String,
    pub image: String,
    pub values: [Option<f64>; 7],
}

impl EvalRecord {
    pub fn new(method: impl Into<String>, image: impl Into<String>) -> Self {
        EvalRecord {
            method: method.into(),
            image: image.into(),
            values: [None; 7],
        }
    }

    pub fn with(mut self, metric: Metric, value: f64) -> Self {
        self.values[metric.index()] = Some(value);
        self
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        self.values[metric.index()]
    }
}

pub const AGGREGATE_MEAN: &str = "__mean";
pub const AGGREGATE_STD: &str = "__std";

/// Per-image scores plus free-form provenance lines.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: Vec<EvalRecord>,
    pub provenance: Vec<(String, String)>,
}

/// Six significant digits, shortest form.
pub fn format_value(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

impl EvalReport {
    pub fn push(&mut self, record: EvalRecord) {
        self.records.push(record);
    }

    /// Method names in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.method) {
                out.push(r.method.clone());
            }
        }
        out
    }

    /// Mean and sample standard deviation of `metric` over a method's
    /// images, `None` when no image has that metric.
    pub fn aggregate(&self, method: &str, metric: Metric) -> Option<(f64, f64)> {
        let values: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.method == method)
            .filter_map(|r| r.get(metric))
            .collect();
        (!values.is_empty()).then(|| mean_std(&values))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,image");
        for m in Metric::ALL {
            out.push(',');
            out.push_str(m.column());
        }
        out.push('\n');
        let cell = |v: Option<f64>| v.map(format_value).unwrap_or_default();
        for r in &self.records {
            write!(out, "{},{}", r.method, r.image).unwrap();
            for v in r.values {
                write!(out, ",{}", cell(v)).unwrap();
            }
            out.push('\n');
        }
        for method in self.methods() {
            for (label, pick) in [(AGGREGATE_MEAN, 0), (AGGREGATE_STD, 1)] {
                write!(out, "{method},{label}").unwrap();
                for m in Metric::ALL {
                    let v = self
                        .aggregate(&method, m)
                        .map(|(mean, std)| if pick == 0 { mean } else { std });
                    write!(out, ",{}", cell(v)).unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    /// Parses the per-image rows of a report CSV; aggregate rows are
    /// skipped since they are derived.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty report".into()))?;
        let expected: Vec<&str> = ["method", "image"]
            .into_iter()
            .chain(Metric::ALL.map(Metric::column))
            .collect();
        if header.split(',').collect::<Vec<_>>() != expected {
            return Err(Error::Format(format!("unexpected report header '{header}'")));
        }
        let mut report = EvalReport::default();
        for (no, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != expected.len() {
                return Err(Error::Format(format!(
                    "report row {} has {} cells",
                    no + 2,
                    cells.len()
                )));
            }
            if cells[1] == AGGREGATE_MEAN || cells[1] == AGGREGATE_STD {
                continue;
            }
            let mut rec = EvalRecord::new(cells[0], cells[1]);
            for (i, c) in cells[2..].iter().enumerate() {
                if !c.is_empty() {
                    rec.values[i] = Some(
                        c.parse()
                            .map_err(|_| Error::Format(format!("bad number '{c}' in report row {}", no + 2)))?,
                    );
                }
            }
            report.push(rec);
        }
        Ok(report)
    }

    pub fn provenance_text(&self) -> String {
        self.provenance.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

/// Per-method means with the best value of each column flagged.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedTable {
    pub columns: Vec<Metric>,
    /// Rows ordered by mean rank across columns (ties keep report order).
    pub rows: Vec<RankedRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedRow {
    pub method: String,
    pub means: Vec<f64>,
    pub best: Vec<bool>,
    pub mean_rank: f64,
}

impl EvalReport {
    /// Ranks methods on every metric that all of them report. Ties share
    /// the best flag.
    pub fn rank(&self) -> Result<RankedTable> {
        let methods = self.methods();
        if methods.is_empty() {
            return Err(Error::invalid("nothing to rank: empty report"));
        }
        let columns: Vec<Metric> = Metric::ALL
            .into_iter()
            .filter(|&m| methods.iter().all(|name| self.aggregate(name, m).is_some()))
            .collect();
        let means: Vec<Vec<f64>> = methods
            .iter()
            .map(|name| {
                columns
                    .iter()
                    .map(|&m| self.aggregate(name, m).expect("filtered").0)
                    .collect()
            })
            .collect();
        let better = |m: Metric, a: f64, b: f64| if m.lower_is_better() { a < b } else { a > b };
        let mut rows: Vec<RankedRow> = methods
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let mut best = Vec::with_capacity(columns.len());
                let mut rank_sum = 0.0;
                for (j, &m) in columns.iter().enumerate() {
                    let beaten_by = means.iter().filter(|other| better(m, other[j], means[i][j])).count();
                    best.push(beaten_by == 0);
                    rank_sum += (beaten_by + 1) as f64;
                }
                RankedRow {
                    method: name.clone(),
                    means: means[i].clone(),
                    best,
                    mean_rank: if columns.is_empty() {
                        1.0
                    } else {
                        rank_sum / columns.len() as f64
                    },
                }
            })
            .collect();
        rows.sort_by(|a, b| a.mean_rank.total_cmp(&b.mean_rank));
        Ok(RankedTable { columns, rows })
    }
}

impl RankedTable {
    /// Fixed-width text; best values carry a trailing `*`.
    pub fn to_text(&self) -> String {
        let mut out = format!("{:<16}", "method");
        for m in &self.columns {
            write!(out, "{:>14}", m.column()).unwrap();
        }
        out.push_str(&format!("{:>10}\n", "rank"));
        for row in &self.rows {
            write!(out, "{:<16}", row.method).unwrap();
            for (v, &best) in row.means.iter().zip(&row.best) {
                let cell = format!("{}{}", format_value(*v), if best { "*" } else { "" });
                write!(out, "{cell:>14}").unwrap();
            }
            writeln!(out, "{:>10.2}", row.mean_rank).unwrap();
        }
        out
    }
}
