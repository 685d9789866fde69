use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use excursion_pp::arrivals::{read_arrivals_csv, write_arrivals_csv, FirstGap, MarkedArrivals};
use excursion_pp::drift::DriftSpec;
use excursion_pp::error::Error;
use excursion_pp::grid::Path as SamplePath;
use excursion_pp::inference::Gaps;
use serde::Deserialize;

use crate::CliError;

pub fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("input file {} does not exist", path.display())));
    }
    Ok(BufReader::new(File::open(path).map_err(Error::from)?))
}

pub fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

pub fn read_spec(path: &Path) -> Result<DriftSpec, CliError> {
    let spec: DriftSpec = serde_json::from_reader(open(path)?).map_err(Error::from)?;
    spec.validate()?;
    Ok(spec)
}

pub fn read_arrivals(path: &Path) -> Result<Vec<(String, MarkedArrivals)>, CliError> {
    Ok(read_arrivals_csv(open(path)?)?)
}

pub fn write_arrivals(path: &Path, seqs: &[(String, MarkedArrivals)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    write_arrivals_csv(&mut w, seqs)?;
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// `t,x1,..,xd`.
pub fn write_path(path: &Path, p: &SamplePath) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = vec!["t".to_string()];
    header.extend((1..=p.dim()).map(|k| format!("x{k}")));
    w.write_record(&header).map_err(Error::from)?;
    for i in 0..p.len() {
        let mut row = vec![p.grid().time(i).to_string()];
        row.extend(p.state(i).iter().map(f64::to_string));
        w.write_record(&row).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

/// Writes rows of numbers under `header`.
pub fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(Error::from)?;
    for row in rows {
        w.write_record(row.iter().map(f64::to_string)).map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    Ok(())
}

#[derive(Deserialize)]
struct EventRow {
    seq_id: String,
    time: f64,
}

/// `seq_id,time` rows grouped by sequence, each sorted.
pub fn read_events(path: &Path) -> Result<Vec<(String, Vec<f64>)>, CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for row in rdr.deserialize() {
        let row: EventRow = row.map_err(Error::from)?;
        match out.iter_mut().find(|(id, _)| *id == row.seq_id) {
            Some((_, v)) => v.push(row.time),
            None => out.push((row.seq_id, vec![row.time])),
        }
    }
    for (_, v) in &mut out {
        v.sort_by(f64::total_cmp);
    }
    Ok(out)
}

#[derive(Deserialize)]
struct SignalRow {
    t: f64,
    value: f64,
}

/// `t,value` rows with strictly increasing `t`.
pub fn read_signal(path: &Path) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let (mut t, mut v) = (Vec::new(), Vec::new());
    for row in rdr.deserialize() {
        let row: SignalRow = row.map_err(Error::from)?;
        t.push(row.t);
        v.push(row.value);
    }
    if t.len() < 2 || t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput("signal needs at least two rows with increasing t".into()).into());
    }
    Ok((t, v))
}

/// Pooled interarrival durations of all sequences.
pub fn durations(seqs: &[(String, MarkedArrivals)], gaps: Gaps, first: FirstGap) -> Vec<f64> {
    seqs.iter()
        .flat_map(|(_, s)| match gaps {
            Gaps::PerMark => s.interarrivals_by_mark(first),
            Gaps::Sequential => s.interarrivals(first),
        })
        .map(|ia| ia.duration)
        .collect()
}
