//! Plot-ready output: tidy `(t, series, value)` CSV and pretty JSON.

use serde::Serialize;

use crate::error::{Error, Result};

/// One named time series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: impl Into<String>) -> Self {
        Series { name: name.into(), points: Vec::new() }
    }

    pub fn push(&mut self, t: f64, value: f64) {
        self.points.push((t, value));
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(|p| p.1)
    }
}

pub const TIDY_HEADER: [&str; 3] = ["t", "series", "value"];

/// Every series as `t,series,value` rows, series in the order given.
pub fn write_tidy_csv(series: &[Series]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TIDY_HEADER)?;
    for s in series {
        for &(t, v) in &s.points {
            w.write_record([t.to_string(), s.name.clone(), v.to_string()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
}

/// Parses tidy CSV back into series, in order of first appearance.
pub fn read_tidy_csv(text: &str) -> Result<Vec<Series>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TIDY_HEADER {
        return Err(Error::Parse(format!("expected header t,series,value, got {}", header.join(","))));
    }
    let mut out: Vec<Series> = Vec::new();
    for (line, row) in r.records().enumerate() {
        let row = row?;
        if row.len() != 3 {
            return Err(Error::Parse(format!("row {}: expected 3 fields", line + 2)));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: `{s}`: {e}", line + 2)));
        let (t, v) = (num(&row[0])?, num(&row[2])?);
        let name = &row[1];
        match out.iter_mut().find(|s| s.name == name) {
            Some(s) => s.push(t, v),
            None => {
                let mut s = Series::new(name);
                s.push(t, v);
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// The series called `name`, or an error listing what is available.
pub fn select<'a>(series: &'a [Series], name: &str) -> Result<&'a Series> {
    series.iter().find(|s| s.name == name).ok_or_else(|| {
        let names: Vec<&str> = series.iter().map(|s| s.name.as_str()).collect();
        Error::Domain(format!("unknown series `{name}`; available: {}", names.join(", ")))
    })
}

/// Running minimum of a series, skipping NaN.
pub fn running_minimum(series: &Series, name: impl Into<String>) -> Series {
    let mut out = Series::new(name);
    let mut best = f64::INFINITY;
    for &(t, v) in &series.points {
        if v < best {
            best = v;
        }
        out.push(t, best);
    }
    out
}

/// Pretty JSON with a trailing newline.
pub fn to_json_pretty<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn unknown_series_lists_the_available_ones() {
        let s = vec![Series::new("a"), Series::new("b")];
        let err = select(&s, "c").unwrap_err().to_string();
        assert!(err.contains("available: a, b"), "{err}");
        assert_eq!(select(&s, "b").unwrap().name, "b");
    }

    #[test]
    fn rejects_foreign_headers_and_bad_numbers() {
        assert!(read_tidy_csv("x,y,z\n").is_err());
        assert!(read_tidy_csv("t,series,value\n1,a,oops\n").is_err());
        assert!(read_tidy_csv("t,series,value\n").unwrap().is_empty());
    }

    #[test]
    fn running_minimum_never_increases() {
        let mut s = Series::new("len");
        for (t, v) in [(0.0, 5.0), (1.0, 7.0), (2.0, 3.0), (3.0, 4.0)] {
            s.push(t, v);
        }
        let m: Vec<f64> = running_minimum(&s, "best").values().collect();
        assert_eq!(m, vec![5.0, 5.0, 3.0, 3.0]);
    }

    proptest! {
        #[test]
        fn tidy_csv_round_trips(data in prop::collection::vec(
            ("[a-z]{1,4}", prop::collection::vec((-1e6f64..1e6, -1e12f64..1e12), 0..6)), 0..5)) {
            let mut series: Vec<Series> = Vec::new();
            for (name, pts) in data {
                if pts.is_empty() || series.iter().any(|s| s.name == name) {
                    continue;
                }
                series.push(Series { name, points: pts });
            }
            let back = read_tidy_csv(&write_tidy_csv(&series).unwrap()).unwrap();
            prop_assert_eq!(back, series);
        }
    }
}
