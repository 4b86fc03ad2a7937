use std::collections::BTreeMap;

use serde::Serialize;

use super::Record;
use crate::error::{Error, Result};
use crate::heads::{COARSE_CLASSES, FINE_CLASSES};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupStats {
    /// A year, or `"overall"`.
    pub group: String,
    pub count: usize,
    pub max: f64,
    pub q25: f64,
    pub mean: f64,
    pub median: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    /// Per-year groups in ascending year order, then the overall group.
    pub groups: Vec<GroupStats>,
    pub coarse_counts: [usize; COARSE_CLASSES],
    pub fine_counts: [usize; FINE_CLASSES],
}

impl DatasetStats {
    pub fn overall(&self) -> &GroupStats {
        self.groups.last().expect("stats always hold an overall group")
    }
}

/// Quantile of sorted data by linear interpolation between order statistics
/// (the `(n − 1)·p` rule).
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn group(name: String, scores: &mut [f64]) -> GroupStats {
    scores.sort_by(f64::total_cmp);
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    GroupStats {
        group: name,
        count: scores.len(),
        max: *scores.last().unwrap(),
        q25: quantile(scores, 0.25),
        mean,
        median: quantile(scores, 0.5),
    }
}

/// Score statistics per year and overall, plus label histograms.
pub fn dataset_stats(records: &[Record]) -> Result<DatasetStats> {
    if records.is_empty() {
        return Err(Error::InvalidInput("dataset_stats needs at least one record".into()));
    }
    let mut by_year: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    let mut coarse_counts = [0; COARSE_CLASSES];
    let mut fine_counts = [0; FINE_CLASSES];
    for r in records {
        if let Some(y) = r.year {
            by_year.entry(y).or_default().push(r.score);
        }
        if let Some(c) = coarse_counts.get_mut(r.coarse_label) {
            *c += 1;
        }
        if let Some(c) = fine_counts.get_mut(r.fine_label) {
            *c += 1;
        }
    }
    let mut groups: Vec<GroupStats> = by_year
        .into_iter()
        .map(|(y, mut s)| group(y.to_string(), &mut s))
        .collect();
    let mut all: Vec<f64> = records.iter().map(|r| r.score).collect();
    groups.push(group("overall".into(), &mut all));
    Ok(DatasetStats {
        groups,
        coarse_counts,
        fine_counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_labels;

    fn rec(score: f64, year: Option<i32>) -> Record {
        let l = build_labels(score).unwrap();
        Record {
            raw_text: "x".into(),
            clean_text: "x".into(),
            token_ids: vec![2],
            coarse_label: l.coarse,
            fine_label: l.fine,
            intensity: l.intensity,
            score,
            year,
        }
    }

    #[test]
    fn three_scores() {
        let recs: Vec<Record> = [7.5, 8.8, 10.0].iter().map(|&s| rec(s, None)).collect();
        let st = dataset_stats(&recs).unwrap();
        let o = st.overall();
        assert_eq!(o.max, 10.0);
        assert_eq!(o.median, 8.8);
        assert!((o.mean - 8.766_666_666_666_667).abs() < 1e-12);
        assert!((o.q25 - 8.15).abs() < 1e-12);
        assert_eq!(st.groups.len(), 1);
    }

    #[test]
    fn single_score() {
        let st = dataset_stats(&[rec(6.3, Some(2016))]).unwrap();
        for g in &st.groups {
            assert_eq!((g.max, g.q25, g.mean, g.median), (6.3, 6.3, 6.3, 6.3));
        }
        assert_eq!(st.groups[0].group, "2016");
    }

    #[test]
    fn grouping_and_histograms() {
        let recs = vec![
            rec(2.0, Some(2017)),
            rec(9.5, Some(2015)),
            rec(7.0, Some(2015)),
            rec(5.0, Some(2016)),
        ];
        let st = dataset_stats(&recs).unwrap();
        let names: Vec<&str> = st.groups.iter().map(|g| g.group.as_str()).collect();
        assert_eq!(names, ["2015", "2016", "2017", "overall"]);
        assert_eq!(st.groups[0].count, 2);
        assert_eq!(st.coarse_counts, [1, 1, 2]);
        assert_eq!(st.fine_counts, [1, 0, 1, 1, 1]);
        assert_eq!(st.coarse_counts.iter().sum::<usize>(), recs.len());
        for g in &st.groups {
            assert!(g.q25 <= g.median && g.median <= g.max);
        }
    }

    #[test]
    fn permutation_invariant() {
        let scores = [3.3, 9.1, 7.7, 5.0, 10.0, 1.2, 8.8];
        let fwd: Vec<Record> = scores.iter().map(|&s| rec(s, Some(2015))).collect();
        let rev: Vec<Record> = scores.iter().rev().map(|&s| rec(s, Some(2015))).collect();
        let (a, b) = (dataset_stats(&fwd).unwrap(), dataset_stats(&rev).unwrap());
        assert_eq!(a.coarse_counts, b.coarse_counts);
        for (x, y) in a.groups.iter().zip(&b.groups) {
            assert_eq!((x.max, x.q25, x.median), (y.max, y.q25, y.median));
            assert!((x.mean - y.mean).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_is_an_error() {
        assert!(dataset_stats(&[]).is_err());
    }
}
