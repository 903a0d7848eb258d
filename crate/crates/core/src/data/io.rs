use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{CountMatrix, Scale};
use crate::error::{validation, Error, Result};

/// Reads a counts TSV and, optionally, a `sample_id<TAB>group` file.
pub fn load_counts(path: &Path, groups_path: Option<&Path>) -> Result<CountMatrix> {
    let m = read_counts(File::open(path)?)?;
    match groups_path {
        Some(gp) => {
            let pairs = load_groups(gp)?;
            attach_groups(m, pairs)
        }
        None => Ok(m),
    }
}

/// Parses a counts table: header row of sample ids, first column marker ids.
pub fn read_counts(reader: impl Read) -> Result<CountMatrix> {
    let reader = BufReader::new(reader);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines.next().ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let header = header?;
    let header = header.trim_end_matches('\r');
    let mut cells = header.split('\t');
    cells.next();
    let sample_ids: Vec<String> = cells.map(str::to_owned).collect();
    if sample_ids.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "header has no sample columns".into(),
        });
    }

    let n = sample_ids.len();
    let mut marker_ids = Vec::new();
    let mut values = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let mut cells = line.split('\t');
        let id = cells.next().unwrap_or_default().to_owned();
        let row: Vec<&str> = cells.collect();
        if row.len() != n {
            return Err(Error::Parse {
                line: lineno,
                message: format!("expected {} values, found {}", n, row.len()),
            });
        }
        for cell in row {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                line: lineno,
                message: format!("not a number: {cell:?}"),
            })?;
            values.push(v);
        }
        marker_ids.push(id);
    }
    let g = marker_ids.len();
    let counts = Array2::from_shape_vec((g, n), values).map_err(|e| validation(e.to_string()))?;
    CountMatrix::new(marker_ids, sample_ids, counts, Scale::RawCounts, None)
}

/// Reads `sample_id<TAB>group` pairs (no header).
pub fn load_groups(path: &Path) -> Result<Vec<(String, String)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let mut cells = line.split('\t');
        match (cells.next(), cells.next(), cells.next()) {
            (Some(s), Some(g), None) => out.push((s.to_owned(), g.to_owned())),
            _ => {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "expected sample_id<TAB>group".into(),
                })
            }
        }
    }
    Ok(out)
}

fn attach_groups(m: CountMatrix, pairs: Vec<(String, String)>) -> Result<CountMatrix> {
    let mut map = HashMap::with_capacity(pairs.len());
    for (s, g) in pairs {
        if map.insert(s.clone(), g).is_some() {
            return Err(validation(format!("sample {s:?} listed twice in groups file")));
        }
    }
    for s in map.keys() {
        if !m.sample_ids().contains(s) {
            return Err(validation(format!("groups file names unknown sample {s:?}")));
        }
    }
    let mut groups = Vec::with_capacity(m.n_samples());
    for s in m.sample_ids() {
        match map.get(s) {
            Some(g) => groups.push(g.clone()),
            None => return Err(validation(format!("sample {s:?} has no group label"))),
        }
    }
    m.with_groups(Some(groups))
}

/// Formats a value the way count tables are written: integers verbatim,
/// everything else with six significant digits (`%g` style).
pub fn format_value(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        return format!("{}", v as i64);
    }
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    // rounding can carry into the next decade
    let rounded: f64 = format!("{:.5e}", v).parse().unwrap_or(v);
    let exp = if rounded.abs() >= 10f64.powi(exp + 1) { exp + 1 } else { exp };
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        let s = format!("{:.*}", decimals, v);
        trim_zeros(&s)
    } else {
        let s = format!("{:.5e}", v);
        let (mant, e) = s.split_once('e').unwrap_or((&s, "0"));
        let e: i32 = e.parse().unwrap_or(0);
        let sign = if e < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim_zeros(mant), sign, e.abs())
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_owned()
    } else {
        s.to_owned()
    }
}

/// Writes the matrix as a counts TSV.
pub fn write_counts(path: &Path, m: &CountMatrix) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "marker_id")?;
    for s in m.sample_ids() {
        write!(w, "\t{s}")?;
    }
    writeln!(w)?;
    for (g, id) in m.marker_ids().iter().enumerate() {
        write!(w, "{id}")?;
        for v in m.counts().row(g) {
            write!(w, "\t{}", format_value(*v))?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `sample_id<TAB>group` lines. Does nothing if `m` has no groups.
pub fn write_groups(path: &Path, m: &CountMatrix) -> Result<()> {
    let Some(groups) = m.groups() else {
        return Ok(());
    };
    let mut w = BufWriter::new(File::create(path)?);
    for (s, g) in m.sample_ids().iter().zip(groups) {
        writeln!(w, "{s}\t{g}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_small_table() {
        let text = "marker_id\ts1\ts2\nm1\t1\t2\nm2\t0\t5\nm3\t7\t3\n";
        let m = read_counts(text.as_bytes()).unwrap();
        assert_eq!((m.n_markers(), m.n_samples()), (3, 2));
        assert_eq!(m.counts()[[2, 0]], 7.0);
        assert_eq!(m.scale(), Scale::RawCounts);
    }

    #[test]
    fn short_row_names_line() {
        let text = "id\ts1\ts2\nm1\t1\t2\nm2\t3\n";
        match read_counts(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn negative_entry_is_validation_error() {
        let text = "id\ts1\ts2\nm1\t1\t-2\n";
        assert!(matches!(read_counts(text.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn groups_must_cover_every_sample() {
        let dir = tempfile::tempdir().unwrap();
        let counts = dir.path().join("c.tsv");
        let groups = dir.path().join("g.tsv");
        std::fs::write(&counts, "id\ts1\ts2\nm1\t1\t2\n").unwrap();
        let mut f = File::create(&groups).unwrap();
        writeln!(f, "s1\tA").unwrap();
        drop(f);
        assert!(matches!(
            load_counts(&counts, Some(&groups)),
            Err(Error::Validation(_))
        ));
        std::fs::write(&groups, "s1\tA\ns2\tB\ns3\tB\n").unwrap();
        assert!(matches!(
            load_counts(&counts, Some(&groups)),
            Err(Error::Validation(_))
        ));
        std::fs::write(&groups, "s2\tB\ns1\tA\n").unwrap();
        let m = load_counts(&counts, Some(&groups)).unwrap();
        assert_eq!(m.groups().unwrap(), &["A".to_string(), "B".to_string()]);
    }

    #[test]
    fn value_formatting() {
        assert_eq!(format_value(3.0), "3");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(1.5), "1.5");
        assert_eq!(format_value(3.14159265), "3.14159");
        assert_eq!(format_value(123456.7), "123457");
        assert_eq!(format_value(1234567.8), "1.23457e+06");
        assert_eq!(format_value(0.000123456789), "0.000123457");
        assert_eq!(format_value(0.00000123456), "1.23456e-06");
        assert_eq!(format_value(9.9999999), "10");
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        let text = "marker_id\ts1\ts2\nm1\t1\t2.5\nm2\t0\t5\n";
        let m = read_counts(text.as_bytes()).unwrap();
        write_counts(&p, &m).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), text);
    }
}
