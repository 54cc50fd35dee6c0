//! Results table (CSV) and per-strategy summary (JSON).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use emoc_core::Strategy;
use serde::{Deserialize, Serialize};

use crate::{ExperimentRecord, HarnessError, Result};

pub const CSV_HEADER: &str = "strategy,seed,labeled_count,accuracy_pct,discovered_classes";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub labeled_count: usize,
    pub mean_accuracy_pct: f64,
    pub mean_discovered_classes: f64,
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    pub seeds: usize,
    pub curve: Vec<CurvePoint>,
    /// Mean number of samples added beyond the start set before every class
    /// had been labeled at least once. Runs that never got there count with
    /// their total added count, so this is a lower bound when
    /// `completed_seeds < seeds`.
    pub mean_samples_to_discovery: f64,
    pub completed_seeds: usize,
    pub mean_final_accuracy_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub total_classes: usize,
    pub strategies: Vec<StrategySummary>,
}

impl Summary {
    pub fn from_records(records: &[ExperimentRecord], total_classes: usize) -> Self {
        let mut order: Vec<Strategy> = Vec::new();
        let mut runs: BTreeMap<(usize, u64), Vec<&ExperimentRecord>> = BTreeMap::new();
        for r in records {
            let pos = match order.iter().position(|&s| s == r.strategy) {
                Some(p) => p,
                None => {
                    order.push(r.strategy);
                    order.len() - 1
                }
            };
            runs.entry((pos, r.seed)).or_default().push(r);
        }

        let strategies = order
            .iter()
            .enumerate()
            .map(|(pos, &strategy)| {
                let seed_runs: Vec<&Vec<&ExperimentRecord>> =
                    runs.range((pos, 0)..=(pos, u64::MAX)).map(|(_, v)| v).collect();
                let mut grid: BTreeMap<usize, (f64, f64, usize)> = BTreeMap::new();
                let mut to_discovery = 0.0;
                let mut completed = 0;
                let mut final_acc = 0.0;
                for run in &seed_runs {
                    for r in run.iter() {
                        let e = grid.entry(r.labeled_count).or_default();
                        e.0 += r.accuracy_pct;
                        e.1 += r.discovered_classes as f64;
                        e.2 += 1;
                    }
                    let start = run.iter().map(|r| r.labeled_count).min().unwrap_or(0);
                    let last = run.iter().max_by_key(|r| r.labeled_count).expect("non-empty run");
                    final_acc += last.accuracy_pct;
                    match run.iter().filter(|r| r.discovered_classes >= total_classes).map(|r| r.labeled_count).min() {
                        Some(n) => {
                            completed += 1;
                            to_discovery += (n - start) as f64;
                        }
                        None => to_discovery += (last.labeled_count - start) as f64,
                    }
                }
                let n = seed_runs.len().max(1) as f64;
                StrategySummary {
                    strategy,
                    seeds: seed_runs.len(),
                    curve: grid
                        .into_iter()
                        .map(|(labeled_count, (acc, disc, k))| CurvePoint {
                            labeled_count,
                            mean_accuracy_pct: acc / k as f64,
                            mean_discovered_classes: disc / k as f64,
                            seeds: k,
                        })
                        .collect(),
                    mean_samples_to_discovery: to_discovery / n,
                    completed_seeds: completed,
                    mean_final_accuracy_pct: final_acc / n,
                }
            })
            .collect();
        Summary { total_classes, strategies }
    }

    pub fn strategy(&self, s: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|x| x.strategy == s)
    }
}

/// `results.csv` -> `results.summary.json`
pub fn summary_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.summary.json"))
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    if records.is_empty() {
        w.write_record(CSV_HEADER.split(','))?;
    }
    w.into_inner().map_err(|e| HarnessError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })
}

pub fn records_from_csv(bytes: &[u8]) -> Result<Vec<ExperimentRecord>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.iter().collect::<Vec<_>>().join(",");
    if header != CSV_HEADER {
        return Err(HarnessError::Config(format!("unexpected results header {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<Vec<ExperimentRecord>, csv::Error>>()?)
}

/// Writes the records to `path` and the summary next to it.
pub fn write_results(path: &Path, records: &[ExperimentRecord], summary: &Summary) -> Result<()> {
    let bytes = records_to_csv(records)?;
    File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(HarnessError::io(path))?;
    let json_path = summary_path(path);
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    std::fs::write(&json_path, json).map_err(HarnessError::io(json_path))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ExperimentRecord>> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => HarnessError::MissingFile(path.to_path_buf()),
            _ => HarnessError::Io { path: path.to_path_buf(), source: e },
        })?;
    records_from_csv(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(strategy: Strategy, seed: u64, n: usize, acc: f64, disc: usize) -> ExperimentRecord {
        ExperimentRecord { strategy, seed, labeled_count: n, accuracy_pct: acc, discovered_classes: disc }
    }

    #[test]
    fn csv_layout() {
        let bytes = records_to_csv(&[rec(Strategy::OneVsTwo, 3, 40, 12.5, 2)]).unwrap();
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            format!("{CSV_HEADER}\none_vs_two,3,40,12.5,2\n")
        );
        let empty = records_to_csv(&[]).unwrap();
        assert_eq!(String::from_utf8(empty).unwrap(), format!("{CSV_HEADER}\n"));
    }

    #[test]
    fn floats_round_trip() {
        let records = vec![rec(Strategy::Emoc, 0, 10, 100.0 / 3.0, 1), rec(Strategy::Emoc, 0, 11, 0.1 + 0.2, 2)];
        let back = records_from_csv(&records_to_csv(&records).unwrap()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn summary_discovery() {
        let records = vec![
            rec(Strategy::Max, 0, 10, 10.0, 2),
            rec(Strategy::Max, 0, 15, 20.0, 3),
            rec(Strategy::Max, 0, 20, 30.0, 3),
            rec(Strategy::Max, 1, 10, 20.0, 2),
            rec(Strategy::Max, 1, 15, 30.0, 2),
            rec(Strategy::Max, 1, 20, 40.0, 2),
        ];
        let s = Summary::from_records(&records, 3);
        let m = s.strategy(Strategy::Max).unwrap();
        assert_eq!(m.seeds, 2);
        assert_eq!(m.completed_seeds, 1);
        assert_eq!(m.mean_samples_to_discovery, (5.0 + 10.0) / 2.0);
        assert_eq!(m.mean_final_accuracy_pct, 35.0);
        assert_eq!(m.curve[1].mean_accuracy_pct, 25.0);
        assert_eq!(m.curve[1].mean_discovered_classes, 2.5);
    }
}
