//! Readers for the two accepted ingestion formats: CSV with columns
//! `id,text,t0..tk` and JSON lines `{"id":..,"text":..,"targets":[..]}`.

use super::{io_err, CorpusError, RawRecord, Result};
use std::io::BufRead;
use std::path::Path;

pub fn read_csv(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CorpusError::Parse(format!("{}: {e}", path.display())))?;
    let headers = rdr
        .headers()
        .map_err(|e| CorpusError::Parse(e.to_string()))?
        .clone();
    if headers.len() < 3 || &headers[0] != "id" || &headers[1] != "text" {
        return Err(CorpusError::Parse(format!(
            "{}: expected header id,text,t0..tk",
            path.display()
        )));
    }
    let mut out = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| CorpusError::Parse(e.to_string()))?;
        let id: u64 = row[0]
            .trim()
            .parse()
            .map_err(|_| CorpusError::Parse(format!("row {}: bad id {:?}", line + 2, &row[0])))?;
        let targets = row
            .iter()
            .skip(2)
            .map(|v| {
                v.trim().parse::<f64>().map_err(|_| CorpusError::Validation {
                    id,
                    reason: format!("unparseable target {v:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        out.push(RawRecord::new(id, &row[1], targets));
    }
    Ok(out)
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line)
            .map_err(|e| CorpusError::Parse(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Dispatches on the file extension: `.csv`, otherwise JSON lines.
pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<RawRecord>> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("csv") => read_csv(path),
        _ => read_jsonl(path),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_and_jsonl_agree() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("d.csv");
        std::fs::write(&csv_path, "id,text,t0,t1\n1,\"Hello, there\",0.5,1\n2,bye,-1,2.25\n").unwrap();
        let jsonl = dir.path().join("d.jsonl");
        std::fs::write(
            &jsonl,
            "{\"id\":1,\"text\":\"Hello, there\",\"targets\":[0.5,1]}\n\n{\"id\":2,\"text\":\"bye\",\"targets\":[-1,2.25]}\n",
        )
        .unwrap();
        let a = read_records(&csv_path).unwrap();
        let b = read_records(&jsonl).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].targets, vec![0.5, 1.0]);
    }

    #[test]
    fn bad_rows_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "id,text,t0\n3,x,abc\n").unwrap();
        assert!(matches!(read_csv(&p), Err(CorpusError::Validation { id: 3, .. })));
        std::fs::write(&p, "name,body,t0\n3,x,1\n").unwrap();
        assert!(read_csv(&p).is_err());
    }
}
