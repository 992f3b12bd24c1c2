use std::io::Write;

use serde::{Deserialize, Serialize};

use super::report::{random_totals, ExperimentReport};
use crate::deployment::Strategy;
use crate::{Error, Result};

/// `q`-th percentile (`0 ≤ q ≤ 100`) with linear interpolation between order
/// statistics at position `(n − 1)·q/100`.
pub fn percentile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty list"));
    }
    if !(0.0..=100.0).contains(&q) {
        return Err(Error::invalid(format!("percentile {q} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = (v.len() - 1) as f64 * q / 100.0;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

/// Fraction of experiments whose proposed gain strictly exceeds the `q`-th
/// percentile of that experiment's random gains, for each `q`.
///
/// Each entry is `(proposed gain, random gains)` and needs at least two
/// random gains.
pub fn skill_score(experiments: &[(f64, Vec<f64>)], percentiles: &[f64]) -> Result<Vec<f64>> {
    if experiments.is_empty() {
        return Err(Error::invalid("no experiments to score"));
    }
    if let Some((i, _)) = experiments.iter().enumerate().find(|(_, (_, r))| r.len() < 2) {
        return Err(Error::invalid(format!("experiment {i} has fewer than two random trials")));
    }
    percentiles
        .iter()
        .map(|&q| {
            let mut wins = 0usize;
            for (proposed, random) in experiments {
                if *proposed > percentile(random, q)? {
                    wins += 1;
                }
            }
            Ok(wins as f64 / experiments.len() as f64)
        })
        .collect()
}

/// Skill scores against every comparison set present in all reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkillTable {
    pub percentiles: Vec<f64>,
    pub columns: Vec<(String, Vec<f64>)>,
}

impl SkillTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["percentile".to_string()];
        header.extend(self.columns.iter().map(|(n, _)| n.clone()));
        wtr.write_record(&header)?;
        for (r, q) in self.percentiles.iter().enumerate() {
            let mut row = vec![q.to_string()];
            row.extend(self.columns.iter().map(|(_, v)| v[r].to_string()));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

fn proposed(report: &ExperimentReport) -> Option<f64> {
    report
        .strategy(Strategy::SurrogateAllAtOnce)
        .or(report.strategies.first())
        .map(|e| e.gain.total)
}

fn single_proposed(report: &ExperimentReport) -> Option<(f64, &ExperimentReport)> {
    let s = report.single_realization.as_ref()?;
    let e = s
        .strategies
        .iter()
        .find(|e| e.plan.strategy == Strategy::SurrogateAllAtOnce)
        .or(s.strategies.first())?;
    Some((e.gain.total, report))
}

/// Scores the all-at-once surrogate (or the first proposed strategy) of each
/// report against its random trials.
///
/// Columns: `random_with_distance`, `random` (ensemble evaluation) and
/// `single_random_with_distance`, `single_random` (held-out realization).
/// A column appears when every report has at least two trials for it.
pub fn skill_table(reports: &[ExperimentReport], percentiles: &[f64]) -> Result<SkillTable> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to score"));
    }
    let mut columns = Vec::new();
    for (name, with_distance) in [("random_with_distance", true), ("random", false)] {
        let entries: Option<Vec<(f64, Vec<f64>)>> = reports
            .iter()
            .map(|r| Some((proposed(r)?, r.random_gains(with_distance))).filter(|(_, v)| v.len() >= 2))
            .collect();
        if let Some(entries) = entries {
            columns.push((name.to_string(), skill_score(&entries, percentiles)?));
        }
    }
    for (name, with_distance) in [("single_random_with_distance", true), ("single_random", false)] {
        let entries: Option<Vec<(f64, Vec<f64>)>> = reports
            .iter()
            .map(|r| {
                let (g, r) = single_proposed(r)?;
                let trials = random_totals(&r.single_realization.as_ref()?.random_trials, with_distance);
                Some((g, trials)).filter(|(_, v)| v.len() >= 2)
            })
            .collect();
        if let Some(entries) = entries {
            columns.push((name.to_string(), skill_score(&entries, percentiles)?));
        }
    }
    if columns.is_empty() {
        return Err(Error::invalid(
            "reports lack a proposed gain or at least two random trials",
        ));
    }
    Ok(SkillTable {
        percentiles: percentiles.to_vec(),
        columns,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 100.0).unwrap(), 4.0);
        assert_eq!(percentile(&v, 50.0).unwrap(), 2.5);
        assert!((percentile(&v, 25.0).unwrap() - 1.75).abs() < 1e-15);
        assert!(percentile(&[], 50.0).is_err());
        assert!(percentile(&v, 101.0).is_err());
    }

    #[test]
    fn extremes() {
        let qs = [5.0, 25.0, 50.0, 75.0, 95.0];
        let below = vec![(0.0, vec![1.0, 2.0, 3.0]), (-1.0, vec![0.0, 5.0])];
        assert_eq!(skill_score(&below, &qs).unwrap(), vec![0.0; 5]);
        let above = vec![(10.0, vec![1.0, 2.0, 3.0]), (6.0, vec![0.0, 5.0])];
        assert_eq!(skill_score(&above, &qs).unwrap(), vec![1.0; 5]);
    }

    #[test]
    fn hand_fixture() {
        // experiment A: randoms 0..=10, proposed 6 → beats q where pct < 6
        // experiment B: randoms {1, 3}, proposed 2 → pct(q) = 1 + 2q/100
        let a: Vec<f64> = (0..=10).map(f64::from).collect();
        let fixture = vec![(6.0, a), (2.0, vec![3.0, 1.0])];
        let qs = [10.0, 50.0, 55.0, 60.0, 90.0];
        // A: pct = q/10 → 1, 5, 5.5, 6, 9 → wins for 10, 50, 55
        // B: pct = 1.2, 2, 2.1, 2.2, 2.8 → wins for 10 only
        assert_eq!(skill_score(&fixture, &qs).unwrap(), vec![1.0, 0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn too_few_trials() {
        assert!(skill_score(&[(1.0, vec![0.5])], &[50.0]).is_err());
        assert!(skill_score(&[], &[50.0]).is_err());
    }
}
