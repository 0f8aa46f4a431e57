//! Grid search over (k1, b) against generated validation queries.

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Bm25Params, InvertedIndex};
use crate::error::{Error, Result};
use crate::generator::Query;
use crate::recommend::retrieve_and_merge;

/// Inclusive arithmetic range `start, start + step, ..., <= stop`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.start.is_finite() && self.stop.is_finite() && self.step.is_finite()) {
            return Err(Error::Config("grid bounds must be finite".into()));
        }
        if self.stop < self.start {
            return Err(Error::Config(format!(
                "grid stop {} is below start {}",
                self.stop, self.start
            )));
        }
        if self.step <= 0.0 {
            if self.stop == self.start {
                return Ok(vec![self.start]);
            }
            return Err(Error::Config("grid step must be positive".into()));
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        // Rounded to 1e-9 so 0.1 + 2 * 0.1 prints as 0.3.
        Ok((0..count)
            .map(|i| ((self.start + i as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamGrid {
    pub k1: GridSpec,
    pub b: GridSpec,
}

impl Default for ParamGrid {
    /// 13 values of k1 over [0, 3] and 9 values of b over (0, 1).
    fn default() -> Self {
        Self {
            k1: GridSpec {
                start: 0.0,
                stop: 3.0,
                step: 0.25,
            },
            b: GridSpec {
                start: 0.1,
                stop: 0.9,
                step: 0.1,
            },
        }
    }
}

impl ParamGrid {
    /// A grid holding exactly one point.
    pub fn single(params: Bm25Params) -> Self {
        let point = |v| GridSpec {
            start: v,
            stop: v,
            step: 0.0,
        };
        Self {
            k1: point(params.k1),
            b: point(params.b),
        }
    }

    /// Grid points in (k1, b) ascending order.
    pub fn points(&self) -> Result<Vec<Bm25Params>> {
        let k1s = self.k1.values()?;
        let bs = self.b.values()?;
        let mut out = Vec::with_capacity(k1s.len() * bs.len());
        for &k1 in &k1s {
            for &b in &bs {
                out.push(Bm25Params::new(k1, b)?);
            }
        }
        Ok(out)
    }
}

/// Generated queries for one validation user and the item to retrieve.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationCase {
    /// Best first.
    pub queries: Vec<Query>,
    pub target: String,
    /// Items filtered out of the hit lists, e.g. the user's history.
    pub excluded: HashSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub k1: f64,
    pub b: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridReport {
    pub k: usize,
    pub rows: Vec<GridPoint>,
    pub best: Bm25Params,
}

impl GridReport {
    /// Tab-separated `k1 b recall` rows under a header line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("k1\tb\trecall\n");
        for row in &self.rows {
            writeln!(out, "{}\t{}\t{}", row.k1, row.b, row.recall).unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str, k: usize) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("k1\tb\trecall") {
            return Err(Error::invalid("grid report lacks the `k1\\tb\\trecall` header"));
        }
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let fields: Vec<f64> = line
                .split('\t')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("grid report row `{line}`: {e}")))?;
            if fields.len() != 3 {
                return Err(Error::invalid(format!("grid report row `{line}` needs 3 fields")));
            }
            rows.push(GridPoint {
                k1: fields[0],
                b: fields[1],
                recall: fields[2],
            });
        }
        let best = argmax(&rows).ok_or_else(|| Error::invalid("grid report has no rows"))?;
        Ok(Self { k, rows, best })
    }
}

/// Highest recall; ties go to the smaller k1, then the smaller b.
pub fn argmax(rows: &[GridPoint]) -> Option<Bm25Params> {
    rows.iter()
        .min_by(|x, y| {
            y.recall
                .total_cmp(&x.recall)
                .then(x.k1.total_cmp(&y.k1))
                .then(x.b.total_cmp(&y.b))
        })
        .map(|p| Bm25Params { k1: p.k1, b: p.b })
}

/// Recall@`k` of retrieval plus merge over `cases` for one parameter pair.
pub fn validation_recall(index: &InvertedIndex, params: &Bm25Params, cases: &[ValidationCase], k: usize) -> f64 {
    let hits: usize = cases
        .iter()
        .filter(|case| {
            retrieve_and_merge(index, params, &case.queries, k, &case.excluded)
                .map(|items| items.iter().any(|m| m.item_id == case.target))
                .unwrap_or(false)
        })
        .count();
    hits as f64 / cases.len() as f64
}

/// Evaluates every grid point and returns the report with its argmax.
/// Grid points are scored in parallel on the current rayon pool.
pub fn tune_params(index: &InvertedIndex, cases: &[ValidationCase], k: usize, grid: &ParamGrid) -> Result<GridReport> {
    if cases.is_empty() {
        return Err(Error::invalid("cannot tune BM25 on an empty validation set"));
    }
    if k == 0 {
        return Err(Error::Config("tuning K must be at least 1".into()));
    }
    let points = grid.points()?;
    let rows: Vec<GridPoint> = points
        .par_iter()
        .map(|p| GridPoint {
            k1: p.k1,
            b: p.b,
            recall: validation_recall(index, p, cases, k),
        })
        .collect();
    let best = argmax(&rows).ok_or_else(|| Error::Config("parameter grid is empty".into()))?;
    Ok(GridReport { k, rows, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_shape() {
        let pts = ParamGrid::default().points().unwrap();
        assert_eq!(pts.len(), 13 * 9);
        assert_eq!(pts[0], Bm25Params { k1: 0.0, b: 0.1 });
        assert_eq!(pts[2], Bm25Params { k1: 0.0, b: 0.3 });
        assert_eq!(pts.last().unwrap(), &Bm25Params { k1: 3.0, b: 0.9 });
    }

    #[test]
    fn singleton_grid() {
        let p = Bm25Params { k1: 1.1, b: 0.4 };
        assert_eq!(ParamGrid::single(p).points().unwrap(), vec![p]);
    }

    #[test]
    fn bad_grids_rejected() {
        let bad = GridSpec {
            start: 1.0,
            stop: 0.0,
            step: 0.1,
        };
        assert!(bad.values().is_err());
        let out_of_range = ParamGrid {
            k1: GridSpec {
                start: 0.0,
                stop: 4.0,
                step: 1.0,
            },
            ..Default::default()
        };
        assert!(out_of_range.points().is_err());
    }

    #[test]
    fn argmax_tie_break() {
        let rows = [
            GridPoint { k1: 1.0, b: 0.5, recall: 0.4 },
            GridPoint { k1: 0.5, b: 0.9, recall: 0.4 },
            GridPoint { k1: 0.5, b: 0.2, recall: 0.4 },
            GridPoint { k1: 0.0, b: 0.1, recall: 0.3 },
        ];
        assert_eq!(argmax(&rows), Some(Bm25Params { k1: 0.5, b: 0.2 }));
    }

    #[test]
    fn tsv_round_trip() {
        let report = GridReport {
            k: 20,
            rows: vec![
                GridPoint { k1: 0.0, b: 0.1, recall: 0.25 },
                GridPoint { k1: 0.25, b: 0.1, recall: 1.0 / 3.0 },
            ],
            best: Bm25Params { k1: 0.25, b: 0.1 },
        };
        let back = GridReport::from_tsv(&report.to_tsv(), 20).unwrap();
        assert_eq!(back, report);
    }
}
