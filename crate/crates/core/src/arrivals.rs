//! Marked arrival sequences and the `seq_id,time,mark` CSV format.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Mark = u32;

/// Strictly increasing arrival times with one integer mark each, observed
/// from `origin` onwards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkedArrivals {
    times: Vec<f64>,
    marks: Vec<Mark>,
    origin: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interarrival {
    pub duration: f64,
    /// Mark of the arrival that terminates the interval.
    pub mark: Mark,
    /// Absolute time at which the interval starts.
    pub start: f64,
}

/// Whether the gap between `origin` and the first arrival counts as a datum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FirstGap {
    #[default]
    Include,
    Drop,
}

impl MarkedArrivals {
    pub fn new(times: Vec<f64>, marks: Vec<Mark>, origin: f64) -> Result<Self> {
        if times.len() != marks.len() {
            return Err(Error::invalid(format!(
                "{} times but {} marks",
                times.len(),
                marks.len()
            )));
        }
        if !origin.is_finite() {
            return Err(Error::invalid("origin must be finite"));
        }
        if let Some(i) = times.iter().position(|t| !t.is_finite()) {
            return Err(Error::invalid(format!("arrival {i} is not finite")));
        }
        if let Some(&first) = times.first() {
            if first < origin {
                return Err(Error::invalid(format!(
                    "first arrival {first} precedes origin {origin}"
                )));
            }
        }
        if let Some(i) = times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::invalid(format!(
                "arrival times must be strictly increasing: t[{}]={} then t[{}]={}",
                i,
                times[i],
                i + 1,
                times[i + 1]
            )));
        }
        Ok(Self {
            times,
            marks,
            origin,
        })
    }

    /// Single-mark sequence (mark 0).
    pub fn unmarked(times: Vec<f64>, origin: f64) -> Result<Self> {
        let n = times.len();
        Self::new(times, vec![0; n], origin)
    }

    pub fn empty(origin: f64) -> Self {
        Self {
            times: Vec::new(),
            marks: Vec::new(),
            origin,
        }
    }

    /// Builds arrivals by accumulating durations from `origin`.
    pub fn from_interarrivals(durations: &[f64], marks: &[Mark], origin: f64) -> Result<Self> {
        let mut t = origin;
        let times = durations
            .iter()
            .map(|d| {
                t += d;
                t
            })
            .collect();
        Self::new(times, marks.to_vec(), origin)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn marks(&self) -> &[Mark] {
        &self.marks
    }

    pub fn origin(&self) -> f64 {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn distinct_marks(&self) -> Vec<Mark> {
        let mut m = self.marks.clone();
        m.sort_unstable();
        m.dedup();
        m
    }

    /// Interarrival durations, each paired with the mark of the arrival that
    /// ends it. With [`FirstGap::Include`] the first datum is the gap from
    /// `origin` to the first arrival.
    pub fn interarrivals(&self, first: FirstGap) -> Vec<Interarrival> {
        let mut out = Vec::with_capacity(self.times.len());
        let mut prev = self.origin;
        for (i, (&t, &mark)) in self.times.iter().zip(&self.marks).enumerate() {
            if i > 0 || first == FirstGap::Include {
                out.push(Interarrival {
                    duration: t - prev,
                    mark,
                    start: prev,
                });
            }
            prev = t;
        }
        out
    }

    /// Interarrivals computed separately within each mark's own sequence:
    /// the interval for a mark-`m` arrival runs back to the previous mark-`m`
    /// arrival. Output is grouped by mark in ascending order.
    pub fn interarrivals_by_mark(&self, first: FirstGap) -> Vec<Interarrival> {
        split_by_mark(self)
            .values()
            .flat_map(|seq| seq.interarrivals(first))
            .collect()
    }

    /// Arrivals falling in `[origin, t_end]`, keeping the origin.
    pub fn truncated(&self, t_end: f64) -> Self {
        let n = self.times.partition_point(|&t| t <= t_end);
        Self {
            times: self.times[..n].to_vec(),
            marks: self.marks[..n].to_vec(),
            origin: self.origin,
        }
    }
}

/// Partitions arrivals by mark. Every part keeps the original origin.
pub fn split_by_mark(a: &MarkedArrivals) -> BTreeMap<Mark, MarkedArrivals> {
    let mut parts: BTreeMap<Mark, MarkedArrivals> = BTreeMap::new();
    for (&t, &m) in a.times.iter().zip(&a.marks) {
        let part = parts
            .entry(m)
            .or_insert_with(|| MarkedArrivals::empty(a.origin));
        part.times.push(t);
        part.marks.push(m);
    }
    parts
}

/// Inverse of [`split_by_mark`]: merges sequences by time. All parts must
/// share an origin and no two arrivals may coincide.
pub fn merge_by_time<'a, I>(parts: I) -> Result<MarkedArrivals>
where
    I: IntoIterator<Item = &'a MarkedArrivals>,
{
    let mut origin = None;
    let mut all: Vec<(f64, Mark)> = Vec::new();
    for p in parts {
        match origin {
            None => origin = Some(p.origin),
            Some(o) if o != p.origin => {
                return Err(Error::invalid("cannot merge sequences with different origins"))
            }
            _ => {}
        }
        all.extend(p.times.iter().copied().zip(p.marks.iter().copied()));
    }
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (times, marks) = all.into_iter().unzip();
    MarkedArrivals::new(times, marks, origin.unwrap_or(0.0))
}

#[derive(Debug, Serialize, Deserialize)]
struct ArrivalRow {
    seq_id: String,
    time: f64,
    mark: Mark,
}

/// Reads `seq_id,time,mark` rows. Sequences keep first-appearance order;
/// each is given origin 0.
pub fn read_arrivals_csv<R: Read>(reader: R) -> Result<Vec<(String, MarkedArrivals)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["seq_id", "time", "mark"];
    if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::invalid(format!(
            "arrival CSV header must be `seq_id,time,mark`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<Mark>)> = BTreeMap::new();
    for row in rdr.deserialize() {
        let row: ArrivalRow = row?;
        let entry = groups.entry(row.seq_id.clone()).or_insert_with(|| {
            order.push(row.seq_id.clone());
            (Vec::new(), Vec::new())
        });
        entry.0.push(row.time);
        entry.1.push(row.mark);
    }
    order
        .into_iter()
        .map(|id| {
            let (times, marks) = groups.remove(&id).expect("group recorded");
            let seq = MarkedArrivals::new(times, marks, 0.0)
                .map_err(|e| Error::invalid(format!("sequence `{id}`: {e}")))?;
            Ok((id, seq))
        })
        .collect()
}

pub fn write_arrivals_csv<W: Write>(writer: W, sequences: &[(String, MarkedArrivals)]) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    wtr.write_record(["seq_id", "time", "mark"])?;
    for (id, seq) in sequences {
        for (&t, &m) in seq.times.iter().zip(&seq.marks) {
            wtr.serialize(ArrivalRow {
                seq_id: id.clone(),
                time: t,
                mark: m,
            })?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn durations(a: &MarkedArrivals, first: FirstGap) -> Vec<(f64, Mark)> {
        a.interarrivals(first)
            .into_iter()
            .map(|g| (g.duration, g.mark))
            .collect()
    }

    #[test]
    fn interarrivals_include_first_gap() {
        let a = MarkedArrivals::new(vec![0.5, 1.5, 2.0], vec![0, 0, 0], 0.0).unwrap();
        assert_eq!(
            durations(&a, FirstGap::Include),
            vec![(0.5, 0), (1.0, 0), (0.5, 0)]
        );
        assert_eq!(durations(&a, FirstGap::Drop), vec![(1.0, 0), (0.5, 0)]);
    }

    #[test]
    fn empty_sequence_has_no_interarrivals() {
        let a = MarkedArrivals::new(vec![], vec![], 0.0).unwrap();
        assert!(a.interarrivals(FirstGap::Include).is_empty());
    }

    #[test]
    fn non_increasing_times_rejected() {
        assert!(MarkedArrivals::new(vec![2.0, 1.0], vec![0, 0], 0.0).is_err());
        assert!(MarkedArrivals::new(vec![1.0, 1.0], vec![0, 0], 0.0).is_err());
        assert!(MarkedArrivals::new(vec![-1.0], vec![0], 0.0).is_err());
        assert!(MarkedArrivals::new(vec![1.0], vec![0, 1], 0.0).is_err());
    }

    #[test]
    fn durations_pair_with_terminating_mark() {
        let a = MarkedArrivals::new(vec![1.0, 3.0, 4.0], vec![1, 0, 1], 0.5).unwrap();
        assert_eq!(
            durations(&a, FirstGap::Include),
            vec![(0.5, 1), (2.0, 0), (1.0, 1)]
        );
        let by_mark: Vec<(f64, Mark)> = a
            .interarrivals_by_mark(FirstGap::Include)
            .into_iter()
            .map(|g| (g.duration, g.mark))
            .collect();
        assert_eq!(by_mark, vec![(2.5, 0), (0.5, 1), (3.0, 1)]);
    }

    #[test]
    fn split_partitions() {
        let a = MarkedArrivals::new(vec![1.0, 2.0, 3.0], vec![0, 1, 0], 0.0).unwrap();
        let parts = split_by_mark(&a);
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[&0].len(), 2);
        assert_eq!(parts[&1].len(), 1);

        let single = MarkedArrivals::unmarked(vec![1.0, 2.0], 0.0).unwrap();
        let parts = split_by_mark(&single);
        assert_eq!(parts.len(), 1);
        assert_eq!(parts[&0], single);

        assert!(split_by_mark(&MarkedArrivals::empty(0.0)).is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let seqs = vec![
            (
                "a".to_string(),
                MarkedArrivals::new(vec![0.1, 0.30000000000000004, 1.0 / 3.0], vec![0, 1, 0], 0.0)
                    .unwrap(),
            ),
            (
                "b".to_string(),
                MarkedArrivals::unmarked(vec![2.5], 0.0).unwrap(),
            ),
        ];
        let mut buf = Vec::new();
        write_arrivals_csv(&mut buf, &seqs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("seq_id,time,mark\n"));
        let back = read_arrivals_csv(buf.as_slice()).unwrap();
        assert_eq!(back, seqs);
    }

    #[test]
    fn csv_rejects_bad_header_and_order() {
        assert!(read_arrivals_csv("id,t,m\n1,0.5,0\n".as_bytes()).is_err());
        assert!(read_arrivals_csv("seq_id,time,mark\n1,0.5,0\n1,0.2,0\n".as_bytes()).is_err());
    }

    fn arb_arrivals() -> impl Strategy<Value = MarkedArrivals> {
        (
            prop::collection::vec((1e-3f64..10.0, 0u32..3), 0..40),
            -5.0f64..5.0,
        )
            .prop_filter_map("strictly increasing", |(gaps, origin)| {
                let (d, m): (Vec<f64>, Vec<Mark>) = gaps.into_iter().unzip();
                MarkedArrivals::from_interarrivals(&d, &m, origin).ok()
            })
    }

    proptest! {
        #[test]
        fn cumulative_sum_reconstructs_times(a in arb_arrivals()) {
            let gaps = a.interarrivals(FirstGap::Include);
            let mut t = a.origin();
            for (g, &orig) in gaps.iter().zip(a.times()) {
                t += g.duration;
                prop_assert!((t - orig).abs() <= 1e-12 * orig.abs().max(1.0));
                prop_assert!(g.duration > 0.0);
            }
        }

        #[test]
        fn split_then_merge_is_identity(a in arb_arrivals()) {
            let parts = split_by_mark(&a);
            if a.is_empty() {
                prop_assert!(parts.is_empty());
            } else {
                let merged = merge_by_time(parts.values()).unwrap();
                prop_assert_eq!(merged, a);
            }
        }
    }
}
