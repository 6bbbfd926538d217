//! Strategy catalogue, per-day profit bookkeeping and exact selection of
//! a small pool of complementary FCR commitment patterns.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fcr::{BessSpec, FcrStrategy};

/// The 28 commitment patterns worth backtesting: full commitment in the
/// overnight blocks where intraday spreads are thin, crossed with every
/// way of holding back capacity in the afternoon and evening blocks
/// where price spikes reward tradeable headroom. Components are scaled
/// down proportionally for units under 10 MW so the bid cap still holds.
pub fn default_catalogue(spec: &BessSpec) -> Vec<FcrStrategy> {
    let mut raw: Vec<[u32; 6]> = vec![[5, 5, 5, 8, 8, 8], [8, 8, 8, 5, 5, 5]];
    for b4 in [0u32, 5, 8] {
        for b5 in [0u32, 5, 8] {
            for b6 in [0u32, 5, 8] {
                if (b4, b5, b6) == (5, 5, 5) {
                    continue;
                }
                raw.push([8, 8, 8, b4, b5, b6]);
            }
        }
    }
    let scale = (spec.power_cap_mw / 10.0).min(1.0);
    raw.into_iter()
        .map(|x| {
            let scaled = x.map(|v| (f64::from(v) * scale).floor() as u32);
            FcrStrategy::new(scaled, spec).expect("scaled components stay under the bid cap")
        })
        .collect()
}

/// Realized profit of one strategy on one day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfitEntry {
    pub pi_fcr_eur: f64,
    pub pi_idm_eur: f64,
}

impl ProfitEntry {
    pub fn total(&self) -> f64 {
        self.pi_fcr_eur + self.pi_idm_eur
    }
}

/// Dense day-by-strategy profit table. Every stored day carries an entry
/// for every catalogue strategy; days never backtested are simply absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfitMatrix {
    strategies: Vec<FcrStrategy>,
    rows: BTreeMap<NaiveDate, Vec<ProfitEntry>>,
}

/// Outcome of the pool search: the chosen strategies in catalogue order
/// and the training profit they would earn under perfect selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSelection {
    pub indices: Vec<usize>,
    pub strategies: Vec<FcrStrategy>,
    pub objective_eur: f64,
}

impl ProfitMatrix {
    pub fn new(strategies: Vec<FcrStrategy>) -> Result<ProfitMatrix> {
        if strategies.is_empty() {
            return Err(Error::domain("catalogue must not be empty"));
        }
        for (i, s) in strategies.iter().enumerate() {
            if strategies[..i].contains(s) {
                return Err(Error::domain(format!("duplicate catalogue entry {s}")));
            }
        }
        Ok(ProfitMatrix {
            strategies,
            rows: BTreeMap::new(),
        })
    }

    pub fn strategies(&self) -> &[FcrStrategy] {
        &self.strategies
    }

    pub fn days(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        self.rows.keys().copied()
    }

    pub fn day_count(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, day: NaiveDate, strategy_index: usize) -> Option<&ProfitEntry> {
        self.rows.get(&day).and_then(|r| r.get(strategy_index))
    }

    /// Adds one backtested day; entries follow catalogue order.
    pub fn insert_day(&mut self, day: NaiveDate, entries: Vec<ProfitEntry>) -> Result<()> {
        if entries.len() != self.strategies.len() {
            return Err(Error::data(format!(
                "day {day} has {} entries for a catalogue of {}",
                entries.len(),
                self.strategies.len()
            )));
        }
        if self.rows.contains_key(&day) {
            return Err(Error::data(format!("day {day} inserted twice")));
        }
        self.rows.insert(day, entries);
        Ok(())
    }

    /// Drops days before `cutoff`, keeping the matrix a rolling window.
    pub fn retain_from(&mut self, cutoff: NaiveDate) {
        self.rows.retain(|d, _| *d >= cutoff);
    }

    /// Copy of the matrix holding only days in `[from, to]`.
    pub fn restrict(&self, from: NaiveDate, to: NaiveDate) -> ProfitMatrix {
        ProfitMatrix {
            strategies: self.strategies.clone(),
            rows: self
                .rows
                .range(from..=to)
                .map(|(d, e)| (*d, e.clone()))
                .collect(),
        }
    }

    /// Picks the size-`s` subset maximizing total profit when every day
    /// uses its best pool strategy. Exact: branch and bound over subsets
    /// with an optimistic union bound, which is equivalent to the binary
    /// selection program because the per-day choice is a plain argmax
    /// once the subset is fixed.
    pub fn select_pool(&self, s: usize) -> Result<PoolSelection> {
        let n = self.strategies.len();
        if s == 0 || s > n {
            return Err(Error::domain(format!(
                "pool size {s} outside 1..={n}"
            )));
        }
        if self.rows.is_empty() {
            return Err(Error::data("profit matrix has no days"));
        }
        let totals: Vec<Vec<f64>> = self
            .rows
            .values()
            .map(|r| r.iter().map(ProfitEntry::total).collect())
            .collect();
        let d_count = totals.len();

        // visit strong columns first so the incumbent tightens early
        let col_sum: Vec<f64> = (0..n)
            .map(|j| totals.iter().map(|r| r[j]).sum())
            .collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|a, b| {
            col_sum[*b]
                .partial_cmp(&col_sum[*a])
                .expect("profits are finite")
                .then(a.cmp(b))
        });

        // suffix[k][d] = best profit on day d among candidates k..
        let mut suffix = vec![vec![f64::NEG_INFINITY; d_count]; n + 1];
        for k in (0..n).rev() {
            for d in 0..d_count {
                suffix[k][d] = suffix[k + 1][d].max(totals[d][order[k]]);
            }
        }

        let mut search = PoolSearch {
            totals: &totals,
            order: &order,
            suffix: &suffix,
            s,
            best_value: f64::NEG_INFINITY,
            best_set: Vec::new(),
        };
        let mut day_max = vec![f64::NEG_INFINITY; d_count];
        search.dfs(0, &mut Vec::with_capacity(s), &mut day_max);

        let mut indices = search.best_set;
        indices.sort_unstable();
        let strategies = indices.iter().map(|&j| self.strategies[j]).collect();
        Ok(PoolSelection {
            indices,
            strategies,
            objective_eur: search.best_value,
        })
    }

    /// Best pool strategy per day; exact ties go to the strategy listed
    /// first in the catalogue.
    pub fn label_days(&self, pool: &[FcrStrategy]) -> Result<Vec<(NaiveDate, FcrStrategy)>> {
        let mut indices = Vec::with_capacity(pool.len());
        for s in pool {
            let idx = self
                .strategies
                .iter()
                .position(|c| c == s)
                .ok_or_else(|| Error::domain(format!("strategy {s} not in the catalogue")))?;
            indices.push(idx);
        }
        if indices.is_empty() {
            return Err(Error::domain("pool must not be empty"));
        }
        indices.sort_unstable();
        Ok(self
            .rows
            .iter()
            .map(|(day, entries)| {
                let best = indices
                    .iter()
                    .copied()
                    .max_by(|a, b| {
                        entries[*a]
                            .total()
                            .partial_cmp(&entries[*b].total())
                            .expect("profits are finite")
                            // max_by keeps the later of equals; reverse the
                            // index order so the earlier catalogue entry wins
                            .then(b.cmp(a))
                    })
                    .expect("pool is nonempty");
                (*day, self.strategies[best])
            })
            .collect())
    }
}

struct PoolSearch<'a> {
    totals: &'a [Vec<f64>],
    order: &'a [usize],
    suffix: &'a [Vec<f64>],
    s: usize,
    best_value: f64,
    best_set: Vec<usize>,
}

impl PoolSearch<'_> {
    fn dfs(&mut self, pos: usize, chosen: &mut Vec<usize>, day_max: &mut [f64]) {
        if chosen.len() == self.s {
            let value: f64 = day_max.iter().sum();
            if value > self.best_value {
                self.best_value = value;
                self.best_set = chosen.clone();
            }
            return;
        }
        if self.order.len() - pos < self.s - chosen.len() {
            return;
        }
        let bound: f64 = day_max
            .iter()
            .zip(&self.suffix[pos])
            .map(|(m, u)| m.max(*u))
            .sum();
        if bound <= self.best_value {
            return;
        }
        let j = self.order[pos];
        let saved: Vec<f64> = day_max.to_vec();
        for (d, m) in day_max.iter_mut().enumerate() {
            *m = m.max(self.totals[d][j]);
        }
        chosen.push(j);
        self.dfs(pos + 1, chosen, day_max);
        chosen.pop();
        day_max.copy_from_slice(&saved);
        self.dfs(pos + 1, chosen, day_max);
    }
}

pub mod io {
    //! Profit-matrix CSV with schema `date,strategy_id,pi_fcr,pi_idm,pi_total`.

    use std::path::Path;

    use chrono::NaiveDate;

    use super::{ProfitEntry, ProfitMatrix};
    use crate::error::{Error, Result};
    use crate::fcr::FcrStrategy;

    const HEADER: [&str; 5] = ["date", "strategy_id", "pi_fcr", "pi_idm", "pi_total"];

    pub fn save_profit_matrix(path: &Path, matrix: &ProfitMatrix) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(HEADER)?;
        for day in matrix.days().collect::<Vec<_>>() {
            for (j, strategy) in matrix.strategies().iter().enumerate() {
                let e = matrix.entry(day, j).expect("matrix rows are dense");
                w.write_record([
                    day.to_string(),
                    strategy.to_string(),
                    format!("{}", e.pi_fcr_eur),
                    format!("{}", e.pi_idm_eur),
                    format!("{}", e.total()),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load_profit_matrix(path: &Path, catalogue: &[FcrStrategy]) -> Result<ProfitMatrix> {
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
        let mut rows = r.records();
        let header = rows
            .next()
            .ok_or_else(|| Error::data("empty profit matrix file"))??;
        if header.iter().ne(HEADER) {
            return Err(Error::SchemaMismatch {
                expected: HEADER.join(","),
                actual: header.iter().collect::<Vec<_>>().join(","),
            });
        }
        let mut matrix = ProfitMatrix::new(catalogue.to_vec())?;
        let mut pending: Option<(NaiveDate, Vec<ProfitEntry>)> = None;
        for (i, rec) in rows.enumerate() {
            let rec = rec?;
            let row = i + 2;
            let field = |j: usize| -> Result<&str> {
                rec.get(j).ok_or(Error::Ingestion {
                    row,
                    message: "missing field".into(),
                })
            };
            let num = |s: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|e| Error::Ingestion {
                    row,
                    message: format!("bad number {s:?}: {e}"),
                })
            };
            let day: NaiveDate = field(0)?.parse().map_err(|e| Error::Ingestion {
                row,
                message: format!("bad date {:?}: {e}", rec.get(0).unwrap_or("")),
            })?;
            let strategy = FcrStrategy::parse(field(1)?).map_err(|e| Error::Ingestion {
                row,
                message: e.to_string(),
            })?;
            let entry = ProfitEntry {
                pi_fcr_eur: num(field(2)?)?,
                pi_idm_eur: num(field(3)?)?,
            };
            let total = num(field(4)?)?;
            if (total - entry.total()).abs() > 0.005 {
                return Err(Error::Ingestion {
                    row,
                    message: format!(
                        "pi_total {total} disagrees with pi_fcr + pi_idm = {}",
                        entry.total()
                    ),
                });
            }
            if pending.as_ref().is_some_and(|(d, _)| *d != day) {
                let (done_day, done) = pending.take().expect("pending row exists");
                matrix.insert_day(done_day, done)?;
            }
            let (_, entries) = pending.get_or_insert_with(|| (day, Vec::new()));
            if catalogue.get(entries.len()) != Some(&strategy) {
                return Err(Error::Ingestion {
                    row,
                    message: format!("strategy {strategy} out of catalogue order for {day}"),
                });
            }
            entries.push(entry);
        }
        if let Some((day, entries)) = pending {
            matrix.insert_day(day, entries)?;
        }
        Ok(matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cat3() -> Vec<FcrStrategy> {
        default_catalogue(&BessSpec::default())[..3].to_vec()
    }

    fn day(n: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 1, n).unwrap()
    }

    fn entry(total: f64) -> ProfitEntry {
        ProfitEntry {
            pi_fcr_eur: 0.0,
            pi_idm_eur: total,
        }
    }

    fn matrix_from(totals: &[Vec<f64>]) -> ProfitMatrix {
        let strategies = default_catalogue(&BessSpec::default())[..totals[0].len()].to_vec();
        let mut m = ProfitMatrix::new(strategies).unwrap();
        for (d, row) in totals.iter().enumerate() {
            m.insert_day(day(d as u32 + 1), row.iter().copied().map(entry).collect())
                .unwrap();
        }
        m
    }

    #[test]
    fn catalogue_matches_the_published_set() {
        let cat = default_catalogue(&BessSpec::default());
        assert_eq!(cat.len(), 28);
        assert_eq!(cat[0], FcrStrategy([5, 5, 5, 8, 8, 8]));
        assert_eq!(cat[1], FcrStrategy([8, 8, 8, 5, 5, 5]));
        assert_eq!(cat[2], FcrStrategy([8, 8, 8, 0, 0, 0]));
        assert_eq!(cat[19], FcrStrategy([8, 8, 8, 8, 0, 0]));
        assert_eq!(cat[27], FcrStrategy([8, 8, 8, 8, 8, 8]));
        let cap = BessSpec::default().fcr_bid_cap_mw();
        assert!(cat.iter().all(|s| s.0.iter().all(|&x| x <= cap)));
        // no duplicates
        for (i, s) in cat.iter().enumerate() {
            assert!(!cat[..i].contains(s), "{s} repeated");
        }
    }

    #[test]
    fn small_unit_catalogue_scales_under_its_own_cap() {
        let spec = BessSpec {
            power_cap_mw: 5.0,
            ..BessSpec::default()
        };
        let cat = default_catalogue(&spec);
        assert_eq!(cat.len(), 28);
        let cap = spec.fcr_bid_cap_mw();
        assert_eq!(cap, 4);
        assert!(cat.iter().all(|s| s.0.iter().all(|&x| x <= cap)));
        assert_eq!(cat[27], FcrStrategy([4, 4, 4, 4, 4, 4]));
    }

    #[test]
    fn complementary_pair_beats_the_two_best_averages() {
        // strategy totals by day: X1 (10, 0), X2 (9, 0), X3 (0, 8)
        let m = matrix_from(&[vec![10.0, 9.0, 0.0], vec![0.0, 0.0, 8.0]]);
        let pool = m.select_pool(2).unwrap();
        assert_eq!(pool.indices, vec![0, 2]);
        assert_eq!(pool.strategies, vec![cat3()[0], cat3()[2]]);
        assert!((pool.objective_eur - 18.0).abs() < 1e-9);
    }

    #[test]
    fn degenerate_sizes_reduce_to_column_sums_and_full_set() {
        let m = matrix_from(&[vec![10.0, 9.0, 0.0], vec![0.0, 0.0, 8.0]]);
        let single = m.select_pool(1).unwrap();
        assert_eq!(single.indices, vec![0]); // best column sum 10
        assert!((single.objective_eur - 10.0).abs() < 1e-9);
        let full = m.select_pool(3).unwrap();
        assert_eq!(full.indices, vec![0, 1, 2]);
        assert!((full.objective_eur - 18.0).abs() < 1e-9);
    }

    #[test]
    fn pool_size_out_of_range_is_a_domain_error() {
        let m = matrix_from(&[vec![1.0, 2.0, 3.0]]);
        assert!(m.select_pool(0).is_err());
        assert!(m.select_pool(4).is_err());
        assert!(m.select_pool(2).is_ok());
    }

    #[test]
    fn empty_matrix_is_refused() {
        let m = ProfitMatrix::new(cat3()).unwrap();
        assert!(m.select_pool(1).is_err());
    }

    #[test]
    fn sparse_or_duplicate_days_are_refused() {
        let mut m = ProfitMatrix::new(cat3()).unwrap();
        assert!(m
            .insert_day(day(1), vec![entry(1.0), entry(2.0)])
            .is_err());
        m.insert_day(day(1), vec![entry(1.0), entry(2.0), entry(3.0)])
            .unwrap();
        assert!(m
            .insert_day(day(1), vec![entry(1.0), entry(2.0), entry(3.0)])
            .is_err());
    }

    #[test]
    fn objective_is_monotone_in_pool_size() {
        let m = matrix_from(&[
            vec![5.0, -1.0, 3.0, 0.0],
            vec![-2.0, 4.0, 1.0, 0.5],
            vec![1.0, 1.0, -3.0, 6.0],
        ]);
        let mut prev = f64::NEG_INFINITY;
        for s in 1..=4 {
            let got = m.select_pool(s).unwrap().objective_eur;
            assert!(got >= prev - 1e-12, "s {s}: {got} < {prev}");
            prev = got;
        }
    }

    #[test]
    fn labels_take_the_row_argmax_with_first_catalogue_tie_break() {
        let m = matrix_from(&[vec![100.0, 50.0, 70.0], vec![50.0, 50.0, 20.0]]);
        let cat = cat3();
        let labels = m.label_days(&cat).unwrap();
        assert_eq!(labels[0].1, cat[0]);
        assert_eq!(labels[1].1, cat[0]); // tie with cat[1] -> earlier entry
        // pool order must not affect the tie-break
        let reversed: Vec<FcrStrategy> = cat.iter().rev().copied().collect();
        assert_eq!(m.label_days(&reversed).unwrap(), labels);
        // a strategy outside the catalogue is rejected
        let foreign = FcrStrategy([1, 1, 1, 1, 1, 1]);
        assert!(m.label_days(&[foreign]).is_err());
    }

    #[test]
    fn selection_objective_matches_its_own_labels() {
        let m = matrix_from(&[
            vec![5.0, -1.0, 3.0, 0.0],
            vec![-2.0, 4.0, 1.0, 0.5],
            vec![1.0, 1.0, -3.0, 6.0],
            vec![2.0, 0.0, 2.5, -1.0],
        ]);
        let pool = m.select_pool(2).unwrap();
        let labels = m.label_days(&pool.strategies).unwrap();
        let replay: f64 = labels
            .iter()
            .map(|(d, s)| {
                let j = m.strategies().iter().position(|c| c == s).unwrap();
                m.entry(*d, j).unwrap().total()
            })
            .sum();
        assert!((replay - pool.objective_eur).abs() < 1e-9);
    }

    #[test]
    fn csv_round_trips_and_is_byte_stable() {
        let m = matrix_from(&[vec![10.5, -9.25, 0.1], vec![0.0, 3.0, 8.75]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profits.csv");
        io::save_profit_matrix(&path, &m).unwrap();
        let loaded = io::load_profit_matrix(&path, m.strategies()).unwrap();
        assert_eq!(loaded, m);
        let first = std::fs::read(&path).unwrap();
        io::save_profit_matrix(&path, &m).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);
    }

    #[test]
    fn csv_rejects_out_of_order_and_inconsistent_rows() {
        let m = matrix_from(&[vec![1.0, 2.0, 3.0]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profits.csv");
        io::save_profit_matrix(&path, &m).unwrap();
        // wrong catalogue: ids no longer line up
        let wrong = vec![cat3()[1], cat3()[0], cat3()[2]];
        assert!(io::load_profit_matrix(&path, &wrong).is_err());
        // corrupt a total so it disagrees with its parts
        let text = std::fs::read_to_string(&path).unwrap();
        let broken = text.replace("1,1", "1,99");
        std::fs::write(&path, broken).unwrap();
        assert!(matches!(
            io::load_profit_matrix(&path, m.strategies()),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn retain_from_trims_old_days() {
        let mut m = matrix_from(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        m.retain_from(day(2));
        assert_eq!(m.day_count(), 1);
        assert_eq!(m.days().next(), Some(day(2)));
    }

    #[test]
    fn restrict_keeps_the_closed_date_range() {
        let m = matrix_from(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 2.0, 0.0],
            vec![0.0, 0.0, 3.0],
        ]);
        let w = m.restrict(day(2), day(3));
        assert_eq!(w.day_count(), 2);
        assert_eq!(w.days().collect::<Vec<_>>(), vec![day(2), day(3)]);
        assert_eq!(w.strategies(), m.strategies());
        assert_eq!(w.entry(day(2), 1).unwrap().total(), 2.0);
        assert!(m.day_count() == 3, "source matrix is untouched");
    }
}
