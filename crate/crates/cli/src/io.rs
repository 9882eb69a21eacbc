//! CSV signal and matrix I/O, report writing.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use physfactor_core::Waveform;
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Numeric rows of a CSV file. A non-numeric first row is taken as a header;
/// blank lines and `#` comments are skipped.
pub fn read_rows(path: &Path) -> CliResult<Vec<Vec<f64>>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut rows = Vec::new();
    let mut width = None;
    for (index, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::parse(path, e.to_string()))?;
        let line = record.position().map_or(index as u64 + 1, |p| p.line());
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if index == 0 => continue,
            Err(_) => {
                let bad = record.iter().find(|f| f.parse::<f64>().is_err()).unwrap_or("");
                return Err(CliError::parse(path, format!("line {line}: expected a number, got `{bad}`")));
            }
        };
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CliError::parse(path, format!("line {line}: non-finite value")));
        }
        match width {
            None => width = Some(values.len()),
            Some(w) if w != values.len() => {
                return Err(CliError::parse(
                    path,
                    format!("line {line}: expected {w} columns, found {}", values.len()),
                ))
            }
            _ => {}
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(CliError::parse(path, "no numeric rows"));
    }
    Ok(rows)
}

/// Reads a one-column (value) or two-column (time, value) signal. The
/// sampling rate comes from `fs` when given, otherwise from the time column.
pub fn read_signal(path: &Path, fs: Option<f64>) -> CliResult<Waveform> {
    let rows = read_rows(path)?;
    let (samples, fs) = match rows[0].len() {
        1 => {
            let fs = fs.ok_or_else(|| {
                CliError::Usage(format!(
                    "{}: single-column signal needs --fs",
                    path.display()
                ))
            })?;
            (rows.iter().map(|r| r[0]).collect::<Vec<_>>(), fs)
        }
        2 => {
            let samples = rows.iter().map(|r| r[1]).collect::<Vec<_>>();
            let fs = match fs {
                Some(fs) => fs,
                None => infer_fs(path, &rows)?,
            };
            (samples, fs)
        }
        n => {
            return Err(CliError::parse(
                path,
                format!("expected 1 or 2 columns, found {n}"),
            ))
        }
    };
    Ok(Waveform::new(samples, fs)?)
}

fn infer_fs(path: &Path, rows: &[Vec<f64>]) -> CliResult<f64> {
    if rows.len() < 2 {
        return Err(CliError::parse(path, "need two samples to infer the sampling rate"));
    }
    let span = rows[rows.len() - 1][0] - rows[0][0];
    let step = span / (rows.len() - 1) as f64;
    if !(step > 0.0) {
        return Err(CliError::parse(path, "time column must be increasing"));
    }
    for (i, w) in rows.windows(2).enumerate() {
        if ((w[1][0] - w[0][0]) - step).abs() > 0.01 * step {
            return Err(CliError::parse(
                path,
                format!("non-uniform time step near data row {}", i + 2),
            ));
        }
    }
    Ok(1.0 / step)
}

pub fn read_matrix(path: &Path) -> CliResult<Array2<f64>> {
    let rows = read_rows(path)?;
    let (m, n) = (rows.len(), rows[0].len());
    Ok(Array2::from_shape_vec((m, n), rows.into_iter().flatten().collect()).expect("rows have equal width"))
}

pub fn signal_csv(samples: &[f64], fs: Option<f64>) -> String {
    let mut out = String::new();
    match fs {
        Some(fs) => {
            out.push_str("time_s,value\n");
            for (i, v) in samples.iter().enumerate() {
                out.push_str(&format!("{},{v}\n", i as f64 / fs));
            }
        }
        None => {
            for v in samples {
                out.push_str(&format!("{v}\n"));
            }
        }
    }
    out
}

pub fn matrix_csv(m: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Writes to `path`, or stdout when `path` is `None` or `-`.
pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) if p != Path::new("-") => std::fs::write(p, text).map_err(|e| CliError::io(p, e)),
        _ => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn temp(name: &str, body: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("physfactor-io-{}-{name}", std::process::id()));
        std::fs::write(&dir, body).unwrap();
        dir
    }

    #[test]
    fn header_and_columns() {
        let p = temp("one", "value\n1.0\n2.5\n\n# note\n-3\n");
        let w = read_signal(&p, Some(10.0)).unwrap();
        assert_eq!(w.samples, vec![1.0, 2.5, -3.0]);
        let p = temp("two", "t,v\n0.0,1\n0.04,2\n0.08,3\n");
        let w = read_signal(&p, None).unwrap();
        assert!((w.fs - 25.0).abs() < 1e-9);
        assert_eq!(w.samples, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn malformed_rows_name_the_line() {
        let p = temp("bad", "1.0\n2.0\nabc\n4.0\n");
        let e = read_signal(&p, Some(1.0)).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("line 3"), "{e}");
        let p = temp("ragged", "1,2\n3\n");
        assert!(read_rows(&p).unwrap_err().to_string().contains("line 2"));
        let p = temp("single", "1\n2\n");
        assert!(matches!(read_signal(&p, None), Err(CliError::Usage(_))));
    }

    #[test]
    fn csv_writers_round_trip() {
        let s = [0.1, -2.0, 3.25];
        let p = temp("rt", &signal_csv(&s, Some(20.0)));
        let w = read_signal(&p, None).unwrap();
        assert_eq!(w.samples, s);
        assert!((w.fs - 20.0).abs() < 1e-9);
        let m = ndarray::array![[1.0, 2.0], [3.5, 0.0]];
        let p = temp("mat", &matrix_csv(&m));
        assert_eq!(read_matrix(&p).unwrap(), m);
    }
}
