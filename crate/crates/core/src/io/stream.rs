use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver};
use std::thread::{self, JoinHandle};

use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::types::{EdgeEvent, FeatureKind, FeatureSchema, FeatureValue};

const SOURCE_NAMES: [&str; 3] = ["source_id", "source", "src"];
const DESTINATION_NAMES: [&str; 3] = ["destination_id", "destination", "dst"];
const TIMESTAMP_NAMES: [&str; 3] = ["timestamp", "ts", "time"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamFormat {
    /// Comma-separated with a header row.
    Csv,
    /// One JSON object per line.
    JsonLines,
}

impl StreamFormat {
    /// `.jsonl`, `.ndjson` and `.json` are JSON lines; anything else is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson" | "json") => StreamFormat::JsonLines,
            _ => StreamFormat::Csv,
        }
    }
}

struct CsvColumns {
    source: usize,
    destination: usize,
    timestamp: usize,
    features: Vec<usize>,
}

enum Inner {
    Csv {
        reader: csv::Reader<BufReader<File>>,
        columns: CsvColumns,
        record: csv::StringRecord,
    },
    JsonLines {
        lines: Lines<BufReader<File>>,
        line: u64,
    },
}

/// Iterator over the events of a stream file, in file order. Stops after the
/// first error.
pub struct EdgeReader {
    path: PathBuf,
    features: Vec<(String, FeatureKind)>,
    tolerance: f64,
    inner: Inner,
    latest: Option<f64>,
    index: u64,
    done: bool,
}

/// Opens a stream file, checking the header against the schema's edge
/// features. Timestamps may fall behind the latest one by at most `tolerance`.
pub fn read_edge_stream(path: impl AsRef<Path>, schema: &FeatureSchema, tolerance: f64) -> Result<EdgeReader> {
    let path = path.as_ref().to_path_buf();
    let features: Vec<(String, FeatureKind)> =
        schema.edge_features().map(|f| (f.name.clone(), f.kind)).collect();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let inner = match StreamFormat::from_path(&path) {
        StreamFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(BufReader::new(file));
            let header = reader.headers().map_err(|e| csv_error(&path, e))?.clone();
            let find = |names: &[&str], field: &str| {
                header.iter().position(|h| names.contains(&h)).ok_or_else(|| Error::Parse {
                    path: path.clone(),
                    line: 1,
                    field: field.to_string(),
                    message: "missing column".into(),
                })
            };
            let columns = CsvColumns {
                source: find(&SOURCE_NAMES, "source_id")?,
                destination: find(&DESTINATION_NAMES, "destination_id")?,
                timestamp: find(&TIMESTAMP_NAMES, "timestamp")?,
                features: features
                    .iter()
                    .map(|(name, _)| find(&[name.as_str()], name))
                    .collect::<Result<_>>()?,
            };
            Inner::Csv {
                reader,
                columns,
                record: csv::StringRecord::new(),
            }
        }
        StreamFormat::JsonLines => Inner::JsonLines {
            lines: BufReader::new(file).lines(),
            line: 0,
        },
    };
    Ok(EdgeReader {
        path,
        features,
        tolerance,
        inner,
        latest: None,
        index: 0,
        done: false,
    })
}

/// Reads a whole stream file into memory.
pub fn read_all(path: impl AsRef<Path>, schema: &FeatureSchema, tolerance: f64) -> Result<Vec<EdgeEvent>> {
    read_edge_stream(path, schema, tolerance)?.collect()
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line());
    Error::Parse {
        path: path.to_path_buf(),
        line,
        field: "-".into(),
        message: e.to_string(),
    }
}

impl EdgeReader {
    pub fn path(&self) -> &Path {
        &self.path
    }

    fn parse_error(&self, line: u64, field: &str, message: String) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            field: field.to_string(),
            message,
        }
    }

    fn located(&self, line: u64, field: &str, source: Error) -> Error {
        Error::Located {
            path: self.path.clone(),
            line,
            field: field.to_string(),
            source: Box::new(source),
        }
    }

    fn number(&self, line: u64, field: &str, text: &str) -> Result<f64> {
        let v: f64 = text
            .trim()
            .parse()
            .map_err(|_| self.parse_error(line, field, format!("cannot parse `{text}` as a number")))?;
        if !v.is_finite() {
            return Err(self.located(line, field, Error::Data(format!("value {v} is not finite"))));
        }
        Ok(v)
    }

    fn timestamp(&mut self, line: u64, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(self.located(line, "timestamp", Error::Data(format!("negative timestamp {t}"))));
        }
        if let Some(prev) = self.latest {
            if t < prev - self.tolerance {
                let err = Error::OrderedStream {
                    event_index: self.index,
                    timestamp: t,
                    previous: prev,
                    tolerance: self.tolerance,
                };
                return Err(self.located(line, "timestamp", err));
            }
        }
        self.latest = Some(self.latest.map_or(t, |p| p.max(t)));
        Ok(t)
    }

    fn next_csv(&mut self) -> Option<Result<EdgeEvent>> {
        let Inner::Csv { reader, record, .. } = &mut self.inner else {
            unreachable!()
        };
        match reader.read_record(record) {
            Ok(false) => return None,
            Err(e) => return Some(Err(csv_error(&self.path, e))),
            Ok(true) => {}
        }
        let Inner::Csv { columns, record, .. } = &self.inner else {
            unreachable!()
        };
        let line = record.position().map_or(0, |p| p.line());
        let get = |i: usize, field: &str| {
            record
                .get(i)
                .ok_or_else(|| self.parse_error(line, field, "missing value".into()))
        };
        let parsed = (|| {
            let source = get(columns.source, "source_id")?.to_string();
            let destination = get(columns.destination, "destination_id")?.to_string();
            let ts = self.number(line, "timestamp", get(columns.timestamp, "timestamp")?)?;
            let mut values = Vec::with_capacity(self.features.len());
            for ((name, kind), &col) in self.features.iter().zip(&columns.features) {
                let text = get(col, name)?;
                values.push(match kind {
                    FeatureKind::Numerical => FeatureValue::Num(self.number(line, name, text)?),
                    FeatureKind::Categorical => FeatureValue::Cat(text.to_string()),
                });
            }
            Ok::<_, Error>((source, destination, ts, values))
        })();
        Some(parsed.and_then(|(s, d, ts, values)| {
            let ts = self.timestamp(line, ts)?;
            Ok(EdgeEvent::new(s, d, ts, values))
        }))
    }

    fn json_field<'a>(&self, line: u64, obj: &'a Map<String, Value>, names: &[&str]) -> Result<&'a Value> {
        names
            .iter()
            .find_map(|n| obj.get(*n))
            .ok_or_else(|| self.parse_error(line, names[0], "missing field".into()))
    }

    fn json_number(&self, line: u64, field: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Number(n) => self.number(line, field, &n.to_string()),
            Value::String(s) => self.number(line, field, s),
            other => Err(self.parse_error(line, field, format!("expected a number, found {other}"))),
        }
    }

    fn json_token(&self, line: u64, field: &str, v: &Value) -> Result<String> {
        match v {
            Value::String(s) => Ok(s.clone()),
            Value::Number(_) | Value::Bool(_) => Ok(v.to_string()),
            other => Err(self.parse_error(line, field, format!("expected a string, found {other}"))),
        }
    }

    fn next_json(&mut self) -> Option<Result<EdgeEvent>> {
        let (text, line) = loop {
            let Inner::JsonLines { lines, line } = &mut self.inner else {
                unreachable!()
            };
            *line += 1;
            match lines.next()? {
                Ok(t) if t.trim().is_empty() => continue,
                Ok(t) => break (t, *line),
                Err(e) => return Some(Err(Error::io(&self.path, e))),
            }
        };
        let parsed = (|| {
            let obj: Map<String, Value> = serde_json::from_str(&text)
                .map_err(|e| self.parse_error(line, "-", format!("not a JSON object: {e}")))?;
            let source = self.json_token(line, "source_id", self.json_field(line, &obj, &SOURCE_NAMES)?)?;
            let destination =
                self.json_token(line, "destination_id", self.json_field(line, &obj, &DESTINATION_NAMES)?)?;
            let ts = self.json_number(line, "timestamp", self.json_field(line, &obj, &TIMESTAMP_NAMES)?)?;
            let mut values = Vec::with_capacity(self.features.len());
            for (name, kind) in &self.features {
                let v = self.json_field(line, &obj, &[name.as_str()])?;
                values.push(match kind {
                    FeatureKind::Numerical => FeatureValue::Num(self.json_number(line, name, v)?),
                    FeatureKind::Categorical => FeatureValue::Cat(self.json_token(line, name, v)?),
                });
            }
            Ok::<_, Error>((source, destination, ts, values))
        })();
        Some(parsed.and_then(|(s, d, ts, values)| {
            let ts = self.timestamp(line, ts)?;
            Ok(EdgeEvent::new(s, d, ts, values))
        }))
    }
}

impl Iterator for EdgeReader {
    type Item = Result<EdgeEvent>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let item = match self.inner {
            Inner::Csv { .. } => self.next_csv(),
            Inner::JsonLines { .. } => self.next_json(),
        };
        match &item {
            Some(Ok(_)) => self.index += 1,
            _ => self.done = true,
        }
        item
    }
}

/// Moves parsing to its own thread, handing events over through a bounded
/// queue that preserves file order.
pub fn spawn_reader(reader: EdgeReader, capacity: usize) -> (Receiver<Result<EdgeEvent>>, JoinHandle<()>) {
    let (tx, rx) = sync_channel(capacity.max(1));
    let handle = thread::spawn(move || {
        for item in reader {
            if tx.send(item).is_err() {
                break;
            }
        }
    });
    (rx, handle)
}

/// Writes events in the format implied by the path's extension, with the
/// canonical column names.
pub fn write_edge_stream(path: impl AsRef<Path>, schema: &FeatureSchema, events: &[EdgeEvent]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let names: Vec<&str> = schema.edge_features().map(|f| f.name.as_str()).collect();
    for e in events {
        e.validate(schema)?;
    }
    match StreamFormat::from_path(path) {
        StreamFormat::Csv => {
            let mut w = csv::Writer::from_writer(BufWriter::new(file));
            let mut header = vec!["source_id", "destination_id", "timestamp"];
            header.extend(&names);
            w.write_record(&header)?;
            for e in events {
                let mut row = vec![e.source.to_string(), e.destination.to_string(), e.timestamp.to_string()];
                row.extend(e.values.iter().map(FeatureValue::to_string));
                w.write_record(&row)?;
            }
            w.flush()?;
        }
        StreamFormat::JsonLines => {
            let mut w = BufWriter::new(file);
            for e in events {
                let mut obj = Map::new();
                obj.insert("source_id".into(), Value::String(e.source.to_string()));
                obj.insert("destination_id".into(), Value::String(e.destination.to_string()));
                obj.insert("timestamp".into(), Value::from(e.timestamp));
                for (name, v) in names.iter().zip(&e.values) {
                    let v = match v {
                        FeatureValue::Num(x) => Value::from(*x),
                        FeatureValue::Cat(s) => Value::String(s.clone()),
                    };
                    obj.insert(name.to_string(), v);
                }
                serde_json::to_writer(&mut w, &obj)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FeatureDef;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(vec![FeatureDef::numerical("f1")]).unwrap()
    }

    fn file(dir: &tempfile::TempDir, name: &str, text: &str) -> PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn parses_aliased_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "s.csv", "src,dst,ts,f1\na,b,10.0,0.3\n");
        let ev = read_all(&p, &schema(), 0.0).unwrap();
        assert_eq!(ev, vec![EdgeEvent::new("a", "b", 10.0, vec![FeatureValue::Num(0.3)])]);
    }

    #[test]
    fn nan_timestamp_names_line_and_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "s.csv", "src,dst,ts,f1\na,b,1,0.3\na,b,NaN,0.3\n");
        let err = read_all(&p, &schema(), 0.0).unwrap_err();
        match &err {
            Error::Located { line, field, source, .. } => {
                assert_eq!(*line, 3);
                assert_eq!(field, "timestamp");
                assert!(matches!(**source, Error::Data(_)));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(err.to_string().contains("s.csv:3"));
    }

    #[test]
    fn regression_beyond_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "s.csv", "src,dst,ts,f1\na,b,10,0\nb,c,9,0\n");
        let err = read_all(&p, &schema(), 0.0).unwrap_err();
        assert!(matches!(err, Error::Located { line: 3, ref source, .. } if matches!(**source, Error::OrderedStream { .. })));
        assert_eq!(read_all(&p, &schema(), 1.0).unwrap().len(), 2);
    }

    #[test]
    fn missing_column_and_bad_number() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(&dir, "s.csv", "src,dst,ts\na,b,1\n");
        assert!(matches!(
            read_edge_stream(&p, &schema(), 0.0),
            Err(Error::Parse { line: 1, ref field, .. }) if field == "f1"
        ));
        let p = file(&dir, "t.csv", "src,dst,ts,f1\na,b,1,abc\n");
        assert!(matches!(
            read_all(&p, &schema(), 0.0),
            Err(Error::Parse { line: 2, ref field, .. }) if field == "f1"
        ));
    }

    #[test]
    fn json_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = file(
            &dir,
            "s.jsonl",
            "{\"source\":\"a\",\"destination\":7,\"time\":1.5,\"f1\":2}\n\n{\"src\":\"b\",\"dst\":\"a\",\"ts\":2}\n",
        );
        let mut r = read_edge_stream(&p, &schema(), 0.0).unwrap();
        assert_eq!(
            r.next().unwrap().unwrap(),
            EdgeEvent::new("a", "7", 1.5, vec![FeatureValue::Num(2.0)])
        );
        assert!(matches!(r.next(), Some(Err(Error::Parse { line: 3, .. }))));
        assert!(r.next().is_none());
    }

    #[test]
    fn threaded_reader_keeps_order() {
        let dir = tempfile::tempdir().unwrap();
        let mut text = String::from("src,dst,ts,f1\n");
        for i in 0..500 {
            text.push_str(&format!("n{i},n{},{i},{i}\n", i + 1));
        }
        let p = file(&dir, "s.csv", &text);
        let (rx, handle) = spawn_reader(read_edge_stream(&p, &schema(), 0.0).unwrap(), 8);
        let got: Vec<EdgeEvent> = rx.iter().map(|r| r.unwrap()).collect();
        handle.join().unwrap();
        assert_eq!(got, read_all(&p, &schema(), 0.0).unwrap());
    }
}
