//! Square matrices as CSV with tag-labelled header row and first column.

use std::fs::File;
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub fn write(path: &Path, tags: &[String], m: &Array2<f64>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_to(file, tags, m)?;
    Ok(())
}

pub fn write_to<W: std::io::Write>(out: W, tags: &[String], m: &Array2<f64>) -> Result<()> {
    if m.nrows() != tags.len() || m.ncols() != tags.len() {
        return Err(Error::shape(
            "labelled matrix",
            format!("{0}x{0}", tags.len()),
            format!("{}x{}", m.nrows(), m.ncols()),
        ));
    }
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![String::new()];
    header.extend(tags.iter().cloned());
    w.write_record(&header)?;
    for (tag, row) in tags.iter().zip(m.rows()) {
        let mut rec = vec![tag.clone()];
        // Display for f64 is shortest round-trip
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let tags: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let n = tags.len();
    let mut data = Vec::with_capacity(n * n);
    let mut rows = 0;
    for (ri, rec) in r.records().enumerate() {
        let rec = rec?;
        for (ci, cell) in rec.iter().enumerate().skip(1) {
            data.push(cell.parse::<f64>().map_err(|_| Error::Parse {
                row: ri + 1,
                column: ci + 1,
                tag: tags.get(ci - 1).cloned().unwrap_or_default(),
                value: cell.to_string(),
            })?);
        }
        rows += 1;
    }
    let m = Array2::from_shape_vec((rows, n), data)
        .map_err(|_| Error::shape("labelled matrix", format!("{n} columns per row"), "ragged"))?;
    Ok((tags, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn full_precision_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = array![[1.0, 0.1 + 0.2], [-1.0 / 3.0, f64::MIN_POSITIVE]];
        let tags = vec!["a".to_string(), "b".to_string()];
        write(&path, &tags, &m).unwrap();
        let (t, back) = read(&path).unwrap();
        assert_eq!(t, tags);
        assert_eq!(back, m);
    }

    #[test]
    fn tag_count_must_match() {
        let mut buf = Vec::new();
        let err = write_to(&mut buf, &["a".into()], &Array2::zeros((2, 2)));
        assert!(matches!(err, Err(Error::Shape { .. })));
    }
}
