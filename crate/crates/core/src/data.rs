//! Observed enrollment data.
//!
//! Time is discrete with the first study day at `t = 1`. Each center stores its
//! counts in center-local time `s = t - u + 1`, so `counts[0]` is the center's
//! initiation day and `counts.len()` is the number of days it has recruited up
//! to the interim time.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{AccrualError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CenterRecord {
    pub id: String,
    /// Absolute initiation day (1-based).
    pub u: usize,
    /// Daily enrollments for center-local days `1..=t_int_i`.
    pub counts: Vec<u32>,
}

impl CenterRecord {
    /// Days recruited up to the interim time, `t_int - u + 1`.
    pub fn t_int_local(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| c as u64).sum()
    }
}

/// Validated multicenter enrollment data observed up to `t_int`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollmentPanel {
    centers: Vec<CenterRecord>,
    time_unit: String,
    t_int: usize,
}

impl EnrollmentPanel {
    pub fn new(centers: Vec<CenterRecord>, t_int: usize) -> Result<Self> {
        Self::with_unit(centers, t_int, "day")
    }

    pub fn with_unit(centers: Vec<CenterRecord>, t_int: usize, time_unit: impl Into<String>) -> Result<Self> {
        if t_int == 0 {
            return Err(AccrualError::InvalidPanel("t_int must be at least 1".into()));
        }
        if centers.is_empty() {
            return Err(AccrualError::InvalidPanel("panel has no centers".into()));
        }
        let mut seen = HashMap::with_capacity(centers.len());
        for c in &centers {
            if seen.insert(c.id.as_str(), ()).is_some() {
                return Err(AccrualError::InvalidPanel(format!("duplicate center id {:?}", c.id)));
            }
            if c.u == 0 {
                return Err(AccrualError::InvalidPanel(format!(
                    "center {:?}: initiation time must be at least 1",
                    c.id
                )));
            }
            if c.u > t_int {
                return Err(AccrualError::InvalidPanel(format!(
                    "center {:?}: initiation after interim (u = {} > t_int = {})",
                    c.id, c.u, t_int
                )));
            }
            if c.counts.len() != t_int - c.u + 1 {
                return Err(AccrualError::InvalidPanel(format!(
                    "center {:?}: expected {} daily counts, found {}",
                    c.id,
                    t_int - c.u + 1,
                    c.counts.len()
                )));
            }
        }
        Ok(Self { centers, time_unit: time_unit.into(), t_int })
    }

    pub fn centers(&self) -> &[CenterRecord] {
        &self.centers
    }

    pub fn num_centers(&self) -> usize {
        self.centers.len()
    }

    pub fn t_int(&self) -> usize {
        self.t_int
    }

    pub fn time_unit(&self) -> &str {
        &self.time_unit
    }

    /// Total center-days observed, `sum_i t_int_i`.
    pub fn observation_cells(&self) -> usize {
        self.centers.iter().map(CenterRecord::t_int_local).sum()
    }

    pub fn total_enrolled(&self) -> u64 {
        self.centers.iter().map(CenterRecord::total).sum()
    }

    /// Restrict the panel to an earlier interim time. Centers that have not
    /// started by `t_int` are dropped.
    pub fn truncate(&self, t_int: usize) -> Result<Self> {
        if t_int > self.t_int {
            return Err(AccrualError::InvalidArgument(format!(
                "cannot extend panel from t_int = {} to {}",
                self.t_int, t_int
            )));
        }
        let centers = self
            .centers
            .iter()
            .filter(|c| c.u <= t_int)
            .map(|c| CenterRecord { id: c.id.clone(), u: c.u, counts: c.counts[..t_int - c.u + 1].to_vec() })
            .collect();
        Self::with_unit(centers, t_int, self.time_unit.clone())
    }
}

/// Per-center totals and pooled cumulative counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelSummary {
    pub ids: Vec<String>,
    /// `k_i`, total enrollments per center.
    pub k: Vec<u64>,
    /// `tau_i = t_int_i`, exposure in days per center.
    pub tau: Vec<usize>,
    /// Pooled enrollments per absolute day `1..=t_int`.
    pub daily: Vec<u64>,
    /// `N(t)` for absolute days `1..=t_int`.
    pub cumulative: Vec<u64>,
}

impl PanelSummary {
    pub fn num_centers(&self) -> usize {
        self.k.len()
    }

    pub fn total(&self) -> u64 {
        self.cumulative.last().copied().unwrap_or(0)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["center_id", "k", "tau"])?;
        for ((id, k), tau) in self.ids.iter().zip(&self.k).zip(&self.tau) {
            w.write_record([id.as_str(), &k.to_string(), &tau.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn summarize(panel: &EnrollmentPanel) -> PanelSummary {
    let mut daily = vec![0u64; panel.t_int];
    for c in &panel.centers {
        for (s, &n) in c.counts.iter().enumerate() {
            daily[c.u - 1 + s] += n as u64;
        }
    }
    let cumulative = daily
        .iter()
        .scan(0u64, |acc, &d| {
            *acc += d;
            Some(*acc)
        })
        .collect();
    PanelSummary {
        ids: panel.centers.iter().map(|c| c.id.clone()).collect(),
        k: panel.centers.iter().map(CenterRecord::total).collect(),
        tau: panel.centers.iter().map(CenterRecord::t_int_local).collect(),
        daily,
        cumulative,
    }
}

/// Read a long-format enrollment file with header `center_id,u,s,count`.
///
/// Missing `(center, s)` cells are zero. Rows with `s` beyond the center's
/// last observed day at `t_int` are ignored, which lets a complete registry
/// export be analysed at any earlier interim time.
pub fn ingest_csv(path: impl AsRef<Path>, t_int: usize) -> Result<EnrollmentPanel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| AccrualError::Open { path: path.to_path_buf(), source })?;
    ingest_reader(file, t_int)
}

pub fn ingest_reader<R: Read>(reader: R, t_int: usize) -> Result<EnrollmentPanel> {
    if t_int == 0 {
        return Err(AccrualError::InvalidArgument("t_int must be at least 1".into()));
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);

    let headers = rdr.headers()?.clone();
    let expected = ["center_id", "u", "s", "count"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(AccrualError::row(
            1,
            format!(
                "expected header `center_id,u,s,count`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut starts: Vec<(usize, usize)> = Vec::new(); // (u, row where first seen)
    let mut cells: Vec<HashMap<usize, (u32, usize)>> = Vec::new();

    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| AccrualError::row(row, e.to_string()))?;
        if record.len() != 4 {
            return Err(AccrualError::row(row, format!("expected 4 fields, found {}", record.len())));
        }
        let id = &record[0];
        if id.is_empty() {
            return Err(AccrualError::row(row, "empty center_id"));
        }
        let u = parse_positive(&record[1], "u", row)?;
        let s = parse_positive(&record[2], "s", row)?;
        let count: i64 = record[3]
            .parse()
            .map_err(|_| AccrualError::row(row, format!("malformed count {:?}", &record[3])))?;
        if count < 0 {
            return Err(AccrualError::row(row, format!("negative count {count}")));
        }
        let count = u32::try_from(count)
            .map_err(|_| AccrualError::row(row, format!("count {count} out of range")))?;
        if u > t_int {
            return Err(AccrualError::row(
                row,
                format!("center {id:?}: initiation after interim (u = {u} > t_int = {t_int})"),
            ));
        }

        let slot = match index.get(id) {
            Some(&slot) => {
                let (u0, first_row) = starts[slot];
                if u0 != u {
                    return Err(AccrualError::row(
                        row,
                        format!("center {id:?}: initiation time {u} disagrees with {u0} on row {first_row}"),
                    ));
                }
                slot
            }
            None => {
                let slot = order.len();
                order.push(id.to_string());
                index.insert(id.to_string(), slot);
                starts.push((u, row));
                cells.push(HashMap::new());
                slot
            }
        };

        let local_len = t_int - u + 1;
        if s > local_len {
            continue;
        }
        if let Some(&(_, prev)) = cells[slot].get(&s) {
            return Err(AccrualError::row(
                row,
                format!("duplicate cell (center {id:?}, s = {s}); first seen on row {prev}"),
            ));
        }
        cells[slot].insert(s, (count, row));
    }

    if order.is_empty() {
        return Err(AccrualError::InvalidPanel("file contains no rows".into()));
    }

    let centers = order
        .into_iter()
        .zip(starts)
        .zip(cells)
        .map(|((id, (u, _)), cells)| {
            let mut counts = vec![0u32; t_int - u + 1];
            for (s, (n, _)) in cells {
                counts[s - 1] = n;
            }
            CenterRecord { id, u, counts }
        })
        .collect();
    EnrollmentPanel::new(centers, t_int)
}

fn parse_positive(field: &str, name: &str, row: usize) -> Result<usize> {
    match field.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        _ => Err(AccrualError::row(row, format!("malformed {name} {field:?}: expected an integer >= 1"))),
    }
}

/// Write every observed cell, zeros included, in long format.
pub fn write_csv<W: Write>(panel: &EnrollmentPanel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["center_id", "u", "s", "count"])?;
    for c in &panel.centers {
        let u = c.u.to_string();
        for (s, n) in c.counts.iter().enumerate() {
            w.write_record([c.id.as_str(), &u, &(s + 1).to_string(), &n.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn center(id: &str, u: usize, counts: &[u32]) -> CenterRecord {
        CenterRecord { id: id.into(), u, counts: counts.to_vec() }
    }

    #[test]
    fn ingest_two_rows() {
        let csv = "center_id,u,s,count\nA,1,1,2\nA,1,2,0\n";
        let panel = ingest_reader(csv.as_bytes(), 2).unwrap();
        let summary = summarize(&panel);
        assert_eq!(summary.k, vec![2]);
        assert_eq!(summary.tau, vec![2]);
    }

    #[test]
    fn initiation_after_interim() {
        let csv = "center_id,u,s,count\nA,5,1,1\n";
        let err = ingest_reader(csv.as_bytes(), 3).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("initiation after interim"), "{msg}");
        assert!(msg.contains("row 2"), "{msg}");
    }

    #[test]
    fn rejects_bad_rows() {
        let negative = "center_id,u,s,count\nA,1,1,-1\n";
        assert!(ingest_reader(negative.as_bytes(), 3).unwrap_err().to_string().contains("negative count"));

        let dup = "center_id,u,s,count\nA,1,1,1\nB,1,1,0\nA,1,1,3\n";
        let msg = ingest_reader(dup.as_bytes(), 3).unwrap_err().to_string();
        assert!(msg.contains("row 4") && msg.contains("duplicate"), "{msg}");

        let malformed = "center_id,u,s,count\nA,x,1,1\n";
        assert!(ingest_reader(malformed.as_bytes(), 3).unwrap_err().to_string().contains("malformed u"));

        let short = "center_id,u,s,count\nA,1,1\n";
        assert!(ingest_reader(short.as_bytes(), 3).is_err());

        let header = "id,u,s,count\nA,1,1,1\n";
        assert!(ingest_reader(header.as_bytes(), 3).unwrap_err().to_string().contains("row 1"));

        let inconsistent = "center_id,u,s,count\nA,1,1,1\nA,2,1,1\n";
        assert!(ingest_reader(inconsistent.as_bytes(), 3).is_err());
    }

    #[test]
    fn zero_fill_and_truncation() {
        let csv = "center_id,u,s,count\nB,2,3,4\nA,1,1,1\nA,1,9,5\n";
        let panel = ingest_reader(csv.as_bytes(), 4).unwrap();
        assert_eq!(panel.centers()[0], center("B", 2, &[0, 0, 4]));
        // s = 9 lies beyond t_int and is dropped
        assert_eq!(panel.centers()[1], center("A", 1, &[1, 0, 0, 0]));
    }

    #[test]
    fn single_day_center_allowed() {
        let panel = EnrollmentPanel::new(vec![center("A", 3, &[2])], 3).unwrap();
        assert_eq!(panel.centers()[0].t_int_local(), 1);
    }

    #[test]
    fn summarize_examples() {
        let panel = EnrollmentPanel::new(vec![center("A", 1, &[1, 1]), center("B", 1, &[0, 3])], 2).unwrap();
        let s = summarize(&panel);
        assert_eq!(s.k, vec![2, 3]);
        assert_eq!(s.cumulative[1], 5);

        let zeros = EnrollmentPanel::new(vec![center("A", 1, &[0, 0]), center("B", 2, &[0])], 2).unwrap();
        let s = summarize(&zeros);
        assert!(s.k.iter().all(|&k| k == 0));
        assert!(s.cumulative.iter().all(|&n| n == 0));

        let single = EnrollmentPanel::new(vec![center("A", 1, &[2, 0, 1])], 3).unwrap();
        assert_eq!(summarize(&single).cumulative, vec![2, 2, 3]);
    }

    #[test]
    fn panel_invariants() {
        assert!(EnrollmentPanel::new(vec![], 3).is_err());
        assert!(EnrollmentPanel::new(vec![center("A", 1, &[1]), center("A", 1, &[1])], 1).is_err());
        assert!(EnrollmentPanel::new(vec![center("A", 1, &[1, 2])], 3).is_err());
    }

    #[test]
    fn truncate_drops_late_centers() {
        let panel = EnrollmentPanel::new(vec![center("A", 1, &[1, 2, 3]), center("B", 3, &[4])], 3).unwrap();
        let early = panel.truncate(2).unwrap();
        assert_eq!(early.num_centers(), 1);
        assert_eq!(early.centers()[0].counts, vec![1, 2]);
    }

    #[test]
    fn summary_export() {
        let panel = EnrollmentPanel::new(vec![center("A", 1, &[1, 1])], 2).unwrap();
        let mut out = Vec::new();
        summarize(&panel).write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "center_id,k,tau\nA,2,2\n");
    }
}
