//! CSV formats.
//!
//! * Assignment: `unit,crossover_time`.
//! * Trial: `unit,crossover_time,y0,y1,...,yT`; the number of outcome columns
//!   fixes `T`, and `y0` is the baseline.
//! * Interval results: `lag,method,level,delta_lo,delta_hi`.
//!
//! Errors name the offending line of the file (the header is line 1).

use std::io::{Read, Write};

use crate::ci::ConfidenceInterval;
use crate::combine::CombineMethod;
use crate::design::CrossoverTimes;
use crate::error::{Error, Result};
use crate::mcrt::TrialData;

/// A trial file: unit identifiers plus the data.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFile {
    pub units: Vec<String>,
    pub data: TrialData,
}

fn line_of(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, col: usize, name: &str) -> Result<T> {
    let raw = rec.get(col).unwrap_or("").trim();
    raw.parse().map_err(|_| Error::Parse(format!("line {}: column `{name}`: cannot parse `{raw}`", line_of(rec))))
}

fn reader<R: Read>(r: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r)
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    for (i, want) in expected.iter().enumerate() {
        match headers.get(i) {
            Some(h) if h == *want => {}
            got => {
                return Err(Error::Parse(format!(
                    "line 1: column {} should be `{want}`, found `{}`",
                    i + 1,
                    got.unwrap_or("")
                )))
            }
        }
    }
    Ok(())
}

/// Reads `unit,crossover_time`. `n_times` defaults to the largest time seen.
pub fn read_assignment_csv<R: Read>(r: R, n_times: Option<usize>) -> Result<(Vec<String>, CrossoverTimes)> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    check_header(&headers, &["unit", "crossover_time"])?;
    if headers.len() != 2 {
        return Err(Error::Parse(format!("line 1: expected 2 columns, found {}", headers.len())));
    }
    let mut units = Vec::new();
    let mut times = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        units.push(rec.get(0).unwrap_or("").to_string());
        let a: usize = parse_field(&rec, 1, "crossover_time")?;
        if a == 0 {
            return Err(Error::Parse(format!("line {}: cross-over times start at 1", line_of(&rec))));
        }
        times.push(a);
    }
    if times.is_empty() {
        return Err(Error::Parse("no units".into()));
    }
    let t = n_times.unwrap_or_else(|| times.iter().copied().max().unwrap_or(1));
    Ok((units, CrossoverTimes::from_times(times, t)?))
}

pub fn write_assignment_csv<W: Write>(w: W, units: &[String], a: &CrossoverTimes) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["unit", "crossover_time"])?;
    for (u, t) in units.iter().zip(a.times()) {
        wtr.write_record([u.clone(), t.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads `unit,crossover_time,y0..yT`.
pub fn read_trial_csv<R: Read>(r: R) -> Result<TrialFile> {
    let mut rdr = reader(r);
    let headers = rdr.headers()?.clone();
    check_header(&headers, &["unit", "crossover_time"])?;
    let n_y = headers.len().saturating_sub(2);
    if n_y < 2 {
        return Err(Error::Parse("line 1: need outcome columns y0..yT with T >= 1".into()));
    }
    for (j, h) in headers.iter().skip(2).enumerate() {
        if h != format!("y{j}") {
            return Err(Error::Parse(format!("line 1: column {} should be `y{j}`, found `{h}`", j + 3)));
        }
    }
    let n_times = n_y - 1;
    let mut units = Vec::new();
    let mut times = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => Error::Parse(format!(
                "line {}: expected {expected_len} fields, found {len}",
                pos.as_ref().map_or(0, |p| p.line())
            )),
            _ => Error::from(e),
        })?;
        let line = line_of(&rec);
        units.push(rec.get(0).unwrap_or("").to_string());
        let a: usize = parse_field(&rec, 1, "crossover_time")?;
        if a == 0 || a > n_times {
            return Err(Error::Parse(format!("line {line}: cross-over time {a} outside 1..={n_times}")));
        }
        times.push(a);
        let row = (0..=n_times)
            .map(|t| {
                let v: f64 = parse_field(&rec, t + 2, &format!("y{t}"))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse(format!("line {line}: y{t} is not finite")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if units.is_empty() {
        return Err(Error::Parse("no units".into()));
    }
    let a = CrossoverTimes::from_times(times, n_times)?;
    Ok(TrialFile { units, data: TrialData::new(a, rows)? })
}

pub fn write_trial_csv<W: Write>(w: W, file: &TrialFile) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    let t = file.data.n_times();
    let mut header = vec!["unit".to_string(), "crossover_time".to_string()];
    header.extend((0..=t).map(|j| format!("y{j}")));
    wtr.write_record(&header)?;
    for (i, u) in file.units.iter().enumerate() {
        let mut rec = vec![u.clone(), file.data.crossover().get(i).to_string()];
        rec.extend(file.data.row(i).iter().map(|v| v.to_string()));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// One row of the interval result table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalRow {
    pub lag: usize,
    pub method: CombineMethod,
    pub interval: ConfidenceInterval,
}

pub fn write_interval_csv<W: Write>(w: W, rows: &[IntervalRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["lag", "method", "level", "delta_lo", "delta_hi"])?;
    for r in rows {
        wtr.write_record([
            r.lag.to_string(),
            r.method.to_string(),
            r.interval.level.to_string(),
            r.interval.lo.to_string(),
            r.interval.hi.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_round_trip() {
        let text = "unit,crossover_time,y0,y1,y2\na,1,0,1.5,2\nb,2,0.25,-1,3\nc,2,1,1,1\n";
        let f = read_trial_csv(text.as_bytes()).unwrap();
        assert_eq!(f.units, vec!["a", "b", "c"]);
        assert_eq!(f.data.n_times(), 2);
        assert_eq!(f.data.crossover().times(), &[1, 2, 2]);
        assert_eq!(f.data.row(1), &[0.25, -1.0, 3.0]);
        let mut out = Vec::new();
        write_trial_csv(&mut out, &f).unwrap();
        assert_eq!(read_trial_csv(out.as_slice()).unwrap(), f);
    }

    #[test]
    fn trial_errors_name_the_line() {
        let bad_value = "unit,crossover_time,y0,y1\na,1,0,1\nb,1,0,x\n";
        let e = read_trial_csv(bad_value.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3") && e.contains("y1"), "{e}");
        let short = "unit,crossover_time,y0,y1\na,1,0,1\nb,1,0\n";
        let e = read_trial_csv(short.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 3"), "{e}");
        let late = "unit,crossover_time,y0,y1\na,2,0,1\n";
        let e = read_trial_csv(late.as_bytes()).unwrap_err().to_string();
        assert!(e.contains("line 2"), "{e}");
        let header = "unit,time,y0,y1\na,1,0,1\n";
        assert!(read_trial_csv(header.as_bytes()).unwrap_err().to_string().contains("line 1"));
        assert!(read_trial_csv("unit,crossover_time,y0,y1\n".as_bytes()).is_err());
    }

    #[test]
    fn assignment_round_trip() {
        let (units, a) = read_assignment_csv("unit,crossover_time\nu1,2\nu2,1\n".as_bytes(), None).unwrap();
        assert_eq!(a.spec().counts(), &[1, 1]);
        let mut out = Vec::new();
        write_assignment_csv(&mut out, &units, &a).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "unit,crossover_time\nu1,2\nu2,1\n");
        assert!(read_assignment_csv("unit,crossover_time\nu1,0\n".as_bytes(), None).is_err());
    }

    #[test]
    fn interval_table() {
        let rows = [IntervalRow {
            lag: 2,
            method: CombineMethod::WeightedZ,
            interval: ConfidenceInterval { lo: 0.25, hi: 0.75, level: 0.9, grid_resolution: 1e-6 },
        }];
        let mut out = Vec::new();
        write_interval_csv(&mut out, &rows).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "lag,method,level,delta_lo,delta_hi\n2,weighted_z,0.9,0.25,0.75\n");
    }
}
