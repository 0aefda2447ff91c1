//! Functional dataset container and long-format CSV input/output.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::family::Family;

/// One subject's observed curve, stored as indices into the common grid.
#[derive(Debug, Clone)]
pub struct Subject {
    pub id: String,
    pub grid_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl Subject {
    pub fn num_obs(&self) -> usize {
        self.grid_idx.len()
    }
}

/// Per-subject observation grids and predictor values plus scalar responses.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    pub subjects: Vec<Subject>,
    pub common_grid: Vec<f64>,
    pub responses: Vec<f64>,
    /// Binomial trial counts, one per subject, when the family needs them.
    pub trials: Option<Vec<u64>>,
    pub family: Family,
    /// Asserts the predictor already has zero mean; skips mean estimation.
    pub pre_centered: bool,
}

impl FunctionalDataset {
    pub fn num_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn grid_len(&self) -> usize {
        self.common_grid.len()
    }

    /// Total observation count over all subjects.
    pub fn total_obs(&self) -> usize {
        self.subjects.iter().map(Subject::num_obs).sum()
    }

    /// True when every subject is observed on the full common grid.
    pub fn is_dense(&self) -> bool {
        let m = self.grid_len();
        self.subjects.iter().all(|s| s.num_obs() == m)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.grid_len();
        if m == 0 {
            return Err(Error::InvalidDataset("empty common grid".into()));
        }
        if self.common_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidDataset(
                "common grid must be strictly increasing".into(),
            ));
        }
        if self.subjects.is_empty() {
            return Err(Error::InvalidDataset("no subjects".into()));
        }
        if self.responses.len() != self.subjects.len() {
            return Err(Error::InvalidDataset(format!(
                "{} subjects but {} responses",
                self.subjects.len(),
                self.responses.len()
            )));
        }
        for s in &self.subjects {
            if s.grid_idx.is_empty() {
                return Err(Error::InvalidDataset(format!(
                    "subject {} has no observations",
                    s.id
                )));
            }
            if s.grid_idx.len() != s.values.len() {
                return Err(Error::InvalidDataset(format!(
                    "subject {}: grid/value length mismatch",
                    s.id
                )));
            }
            if s.grid_idx.iter().any(|&i| i >= m) {
                return Err(Error::InvalidDataset(format!(
                    "subject {}: grid index out of range",
                    s.id
                )));
            }
            if s.grid_idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidDataset(format!(
                    "subject {}: duplicate or unsorted grid points",
                    s.id
                )));
            }
        }
        self.family
            .validate_responses(&self.responses, self.trials.as_deref())?;
        Ok(())
    }
}

/// Map raw t values to common-grid indices; the common grid is the sorted
/// set of distinct t values seen in the file.
fn build_grid(ts: &[f64]) -> Vec<f64> {
    let mut grid: Vec<f64> = ts.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * (1.0 + b.abs()));
    grid
}

fn grid_index(grid: &[f64], t: f64) -> Option<usize> {
    let idx = grid.partition_point(|&g| g < t - 1e-12 * (1.0 + t.abs()));
    if idx < grid.len() && (grid[idx] - t).abs() <= 1e-9 * (1.0 + t.abs()) {
        Some(idx)
    } else {
        None
    }
}

type ParsedCurves = (Vec<String>, BTreeMap<String, Vec<(usize, f64)>>, Vec<f64>);

fn parse_curves(curves_path: &Path) -> Result<ParsedCurves> {
    let mut rdr = csv::Reader::from_path(curves_path)?;
    {
        let headers = rdr.headers()?;
        if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "t" || &headers[2] != "x" {
            return Err(Error::CsvFormat {
                line: 1,
                msg: "curves file must have header id,t,x".into(),
            });
        }
    }
    let mut raw: Vec<(String, f64, f64)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parse = |s: &str, what: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::CsvFormat {
                line: line + 2,
                msg: format!("invalid {what} value '{s}'"),
            })
        };
        raw.push((
            rec[0].to_string(),
            parse(&rec[1], "t")?,
            parse(&rec[2], "x")?,
        ));
    }
    if raw.is_empty() {
        return Err(Error::InvalidDataset("curves file has no rows".into()));
    }
    let ts: Vec<f64> = raw.iter().map(|r| r.1).collect();
    let grid = build_grid(&ts);

    // preserve first-appearance order of subject ids
    let mut order: Vec<String> = Vec::new();
    let mut by_id: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for (id, t, x) in raw {
        let gi = grid_index(&grid, t).ok_or_else(|| Error::InvalidDataset(
            format!("t value {t} not resolvable on the common grid"),
        ))?;
        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        if entry.iter().any(|&(g, _)| g == gi) {
            return Err(Error::InvalidDataset(format!(
                "duplicate (id, t) pair: ({id}, {t})"
            )));
        }
        entry.push((gi, x));
    }
    Ok((order, by_id, grid))
}

/// Read long-format curves (header `id,t,x`) and a response file (header
/// `id,y` or `id,y,trials`) into a dataset. Missing grid points are simply
/// absent rows.
pub fn read_dataset(
    curves_path: &Path,
    response_path: &Path,
    family: Family,
    pre_centered: bool,
) -> Result<FunctionalDataset> {
    let (order, mut by_id, grid) = parse_curves(curves_path)?;

    // responses
    let mut rdr = csv::Reader::from_path(response_path)?;
    let has_trials = {
        let headers = rdr.headers()?;
        if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "y" {
            return Err(Error::CsvFormat {
                line: 1,
                msg: "response file must have header id,y[,trials]".into(),
            });
        }
        headers.len() >= 3 && &headers[2] == "trials"
    };
    let mut resp: BTreeMap<String, (f64, Option<u64>)> = BTreeMap::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = rec[0].to_string();
        let y: f64 = rec[1].trim().parse().map_err(|_| Error::CsvFormat {
            line: line + 2,
            msg: format!("invalid y value '{}'", &rec[1]),
        })?;
        let trials = if has_trials {
            Some(rec[2].trim().parse::<u64>().map_err(|_| Error::CsvFormat {
                line: line + 2,
                msg: format!("invalid trials value '{}'", &rec[2]),
            })?)
        } else {
            None
        };
        if resp.insert(id.clone(), (y, trials)).is_some() {
            return Err(Error::InvalidDataset(format!(
                "duplicate response for id {id}"
            )));
        }
    }
    if resp.len() != order.len() {
        return Err(Error::InvalidDataset(format!(
            "{} curve ids but {} response ids",
            order.len(),
            resp.len()
        )));
    }

    let mut subjects = Vec::with_capacity(order.len());
    let mut responses = Vec::with_capacity(order.len());
    let mut trials_vec = Vec::with_capacity(order.len());
    for id in &order {
        let mut obs = by_id.remove(id).unwrap();
        obs.sort_by_key(|&(g, _)| g);
        let (y, tr) = resp.remove(id).ok_or_else(|| {
            Error::InvalidDataset(format!("curve id {id} missing from response file"))
        })?;
        subjects.push(Subject {
            id: id.clone(),
            grid_idx: obs.iter().map(|&(g, _)| g).collect(),
            values: obs.iter().map(|&(_, x)| x).collect(),
        });
        responses.push(y);
        trials_vec.push(tr.unwrap_or(1));
    }

    let trials = if family.needs_trials() {
        if !has_trials {
            return Err(Error::FamilyMismatch(
                "binomial family requires a trials column in the response file".into(),
            ));
        }
        Some(trials_vec)
    } else {
        None
    };

    let ds = FunctionalDataset {
        subjects,
        common_grid: grid,
        responses,
        trials,
        family,
        pre_centered,
    };
    ds.validate()?;
    Ok(ds)
}

/// Read a curves file without responses (FPCA-only use); responses are
/// filled with zeros under a gaussian placeholder family.
pub fn read_curves_only(curves_path: &Path, pre_centered: bool) -> Result<FunctionalDataset> {
    let (order, mut by_id, grid) = parse_curves(curves_path)?;
    let mut subjects = Vec::with_capacity(order.len());
    for id in &order {
        let mut obs = by_id.remove(id).unwrap();
        obs.sort_by_key(|&(g, _)| g);
        subjects.push(Subject {
            id: id.clone(),
            grid_idx: obs.iter().map(|&(g, _)| g).collect(),
            values: obs.iter().map(|&(_, x)| x).collect(),
        });
    }
    let n = subjects.len();
    let ds = FunctionalDataset {
        subjects,
        common_grid: grid,
        responses: vec![0.0; n],
        trials: None,
        family: Family::Gaussian,
        pre_centered,
    };
    ds.validate()?;
    Ok(ds)
}

/// Write a dataset back out as the pair of CSV files `cmd_test` reads.
pub fn write_dataset(
    ds: &FunctionalDataset,
    curves_path: &Path,
    response_path: &Path,
) -> Result<()> {
    let mut w = csv::Writer::from_path(curves_path)?;
    w.write_record(["id", "t", "x"])?;
    for s in &ds.subjects {
        for (&gi, &x) in s.grid_idx.iter().zip(&s.values) {
            w.write_record([s.id.as_str(), &ds.common_grid[gi].to_string(), &x.to_string()])?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(response_path)?;
    if let Some(trials) = &ds.trials {
        w.write_record(["id", "y", "trials"])?;
        for (i, s) in ds.subjects.iter().enumerate() {
            w.write_record([
                s.id.as_str(),
                &ds.responses[i].to_string(),
                &trials[i].to_string(),
            ])?;
        }
    } else {
        w.write_record(["id", "y"])?;
        for (i, s) in ds.subjects.iter().enumerate() {
            w.write_record([s.id.as_str(), &ds.responses[i].to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
