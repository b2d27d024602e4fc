//! File formats: wide data CSV, station CSV, draws CSV and JSON output.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{CliError, CliResult};

/// Float text with 17 significant digits.
pub fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "NaN".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Columns of a wide CSV: one named series per column, rows are time.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::input(path, e.to_string()))
}

fn reader(path: &Path) -> CliResult<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(open(path)?))
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    match e.position() {
        Some(p) => CliError::parse(path, p.line(), e.to_string()),
        None => CliError::input(path, e.to_string()),
    }
}

fn parse_cell(path: &Path, line: u64, column: &str, cell: &str) -> CliResult<f64> {
    if cell.is_empty() || cell.eq_ignore_ascii_case("na") || cell.eq_ignore_ascii_case("nan") {
        return Err(CliError::parse(
            path,
            line,
            format!("missing value in column `{column}`; missing data is not supported"),
        ));
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| CliError::parse(path, line, format!("`{cell}` in column `{column}` is not a number")))?;
    if !v.is_finite() {
        return Err(CliError::parse(path, line, format!("non-finite value `{cell}` in column `{column}`")));
    }
    Ok(v)
}

/// Read a wide, strictly numeric CSV with a header row.
pub fn read_table(path: &Path) -> CliResult<Table> {
    let mut rdr = reader(path)?;
    let names: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_owned)
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(CliError::parse(path, 1, "header row needs a non-empty name for every column"));
    }
    for (i, n) in names.iter().enumerate() {
        if names[..i].contains(n) {
            return Err(CliError::parse(path, 1, format!("duplicate column name `{n}`")));
        }
    }
    let mut columns = vec![Vec::new(); names.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != names.len() {
            return Err(CliError::parse(
                path,
                line,
                format!("expected {} fields, found {}", names.len(), rec.len()),
            ));
        }
        for (j, cell) in rec.iter().enumerate() {
            columns[j].push(parse_cell(path, line, &names[j], cell)?);
        }
    }
    if columns[0].is_empty() {
        return Err(CliError::input(path, "no data rows"));
    }
    Ok(Table { names, columns })
}

/// Station or prediction-site coordinates: `id,x,y[,elev]`, or `x,y` without ids.
/// Elevation is accepted and ignored.
pub fn read_sites(path: &Path) -> CliResult<(Vec<String>, Vec<(f64, f64)>)> {
    let mut rdr = reader(path)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let find = |name: &str| header.iter().position(|h| h == name);
    let (xi, yi) = match (find("x"), find("y")) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(CliError::parse(path, 1, "site file needs `x` and `y` columns")),
    };
    let id_col = find("id");
    let mut ids = Vec::new();
    let mut coords = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != header.len() {
            return Err(CliError::parse(
                path,
                line,
                format!("expected {} fields, found {}", header.len(), rec.len()),
            ));
        }
        let x = parse_cell(path, line, "x", &rec[xi])?;
        let y = parse_cell(path, line, "y", &rec[yi])?;
        let id = match id_col {
            Some(c) if !rec[c].is_empty() => rec[c].to_owned(),
            Some(_) => return Err(CliError::parse(path, line, "empty station id")),
            None => format!("s{}", coords.len() + 1),
        };
        ids.push(id);
        coords.push((x, y));
    }
    if coords.is_empty() {
        return Err(CliError::input(path, "no sites"));
    }
    Ok((ids, coords))
}

/// Buffered CSV output with 17-digit floats.
pub struct CsvOut {
    path: PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let file = File::create(path).map_err(|e| output_error(path, e))?;
        let mut out = Self {
            path: path.to_owned(),
            w: csv::Writer::from_writer(BufWriter::new(file)),
        };
        out.record(header.iter().copied())?;
        Ok(out)
    }

    pub fn record<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).map_err(|e| output_error(&self.path, e.into()))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.w.flush().map_err(|e| output_error(&self.path, e))
    }
}

pub fn output_error(path: &Path, source: std::io::Error) -> CliError {
    CliError::Output {
        path: path.to_owned(),
        source,
    }
}

/// Pretty JSON whose floats carry 17 significant digits.
struct Sci17(PrettyFormatter<'static>);

impl Formatter for Sci17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> std::io::Result<()> {
        write!(w, "{v:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn end_object_key<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_key(w)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sci17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = to_json_string(value);
    text.push('\n');
    std::fs::write(path, text).map_err(|e| output_error(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(path, e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| CliError::parse(path, e.line() as u64, e.to_string()))
}

pub fn write_draws(path: &Path, names: &[String], samples: &[Vec<f64>]) -> CliResult<()> {
    let header: Vec<&str> = names.iter().map(String::as_str).collect();
    let mut out = CsvOut::create(path, &header)?;
    for row in samples {
        out.record(row.iter().map(|v| fmt(*v)))?;
    }
    out.finish()
}

/// Draws written by [`write_draws`]; the header must equal `names`.
pub fn read_draws(path: &Path, names: &[String]) -> CliResult<Vec<Vec<f64>>> {
    let t = read_table(path)?;
    if t.names != names {
        return Err(CliError::input(
            path,
            format!(
                "draw columns do not match the fit: expected {} parameters [{}], found {} [{}]",
                names.len(),
                names.join(", "),
                t.names.len(),
                t.names.join(", ")
            ),
        ));
    }
    let n = t.rows();
    Ok((0..n).map(|i| t.columns.iter().map(|c| c[i]).collect()).collect())
}

pub fn ensure_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| output_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str, text: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        (dir, p)
    }

    #[test]
    fn floats_keep_17_digits() {
        assert_eq!(fmt(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt(f64::NAN), "NaN");
        let json = to_json_string(&serde_json::json!({"a": [1.0f64 / 3.0]}));
        assert!(json.contains("3.3333333333333331e-1"), "{json}");
    }

    #[test]
    fn wide_csv_round_trip() {
        let (_d, p) = tmp("d.csv", "a,b\n0.1,0.2\n0.3,0.4\n");
        let t = read_table(&p).unwrap();
        assert_eq!(t.names, vec!["a", "b"]);
        assert_eq!(t.column("b").unwrap(), &[0.2, 0.4]);
    }

    #[test]
    fn missing_cell_names_the_line() {
        let (_d, p) = tmp("d.csv", "a,b\n0.1,0.2\n0.3,\n");
        match read_table(&p) {
            Err(CliError::Parse { line, message, .. }) => {
                assert_eq!(line, 3);
                assert!(message.contains("missing"));
            }
            other => panic!("{other:?}"),
        }
        let (_d, p) = tmp("d.csv", "a,b\n0.1,0.2\n0.3\n");
        assert!(matches!(read_table(&p), Err(CliError::Parse { line: 3, .. })));
        let (_d, p) = tmp("d.csv", "a\n0.1\nabc\n");
        assert!(matches!(read_table(&p), Err(CliError::Parse { line: 3, .. })));
    }

    #[test]
    fn site_files() {
        let (_d, p) = tmp("s.csv", "id,x,y,elev\nA,0,0,100\nB,1,0.5,20\n");
        let (ids, c) = read_sites(&p).unwrap();
        assert_eq!(ids, vec!["A", "B"]);
        assert_eq!(c[1], (1.0, 0.5));
        let (_d, p) = tmp("s.csv", "x,y\n2,3\n");
        assert_eq!(read_sites(&p).unwrap().0, vec!["s1"]);
    }
}
