use std::io::Write;

use crate::error::{Error, Result};
use crate::types::{EmbeddingLayout, NodeId};

/// What the leading columns of an embedding row identify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordKind {
    /// `node_id`
    Node,
    /// `event_index,source_id,destination_id`
    Event,
    /// `event_index,node_id`: one endpoint's embedding right after an event.
    EventNode,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingRecord {
    Node {
        id: NodeId,
        values: Vec<f64>,
    },
    Event {
        index: u64,
        source: NodeId,
        destination: NodeId,
        values: Vec<f64>,
    },
    EventNode {
        index: u64,
        id: NodeId,
        values: Vec<f64>,
    },
}

/// Renders `v` with 9 significant digits, `%g` style: plain notation for
/// exponents in `[-5, 9)`, scientific otherwise, trailing zeros dropped.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let sci = format!("{v:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Streaming CSV writer for embedding rows with a fixed layout.
pub struct EmbeddingWriter<W: Write> {
    inner: csv::Writer<W>,
    kind: RecordKind,
    width: usize,
    rows: usize,
    row: Vec<String>,
}

impl<W: Write> EmbeddingWriter<W> {
    /// Writes the header immediately.
    pub fn new(sink: W, kind: RecordKind, layout: &EmbeddingLayout) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(sink);
        let mut header: Vec<&str> = match kind {
            RecordKind::Node => vec!["node_id"],
            RecordKind::Event => vec!["event_index", "source_id", "destination_id"],
            RecordKind::EventNode => vec!["event_index", "node_id"],
        };
        header.extend(layout.names.iter().map(String::as_str));
        inner.write_record(&header)?;
        Ok(EmbeddingWriter {
            inner,
            kind,
            width: layout.len(),
            rows: 0,
            row: Vec::with_capacity(header.len()),
        })
    }

    fn check(&self, kind: RecordKind, values: &[f64]) -> Result<()> {
        if kind != self.kind {
            return Err(Error::Structural(format!(
                "{kind:?} row written to a {:?} table",
                self.kind
            )));
        }
        if values.len() != self.width {
            return Err(Error::Structural(format!(
                "row has {} values, layout has {}",
                values.len(),
                self.width
            )));
        }
        Ok(())
    }

    fn finish_row(&mut self, values: &[f64]) -> Result<()> {
        self.row.extend(values.iter().map(|&v| format_sig9(v)));
        self.inner.write_record(&self.row)?;
        self.row.clear();
        self.rows += 1;
        Ok(())
    }

    pub fn write_node(&mut self, id: &NodeId, values: &[f64]) -> Result<()> {
        self.check(RecordKind::Node, values)?;
        self.row.push(id.to_string());
        self.finish_row(values)
    }

    pub fn write_event(&mut self, index: u64, source: &NodeId, destination: &NodeId, values: &[f64]) -> Result<()> {
        self.check(RecordKind::Event, values)?;
        self.row.extend([index.to_string(), source.to_string(), destination.to_string()]);
        self.finish_row(values)
    }

    pub fn write_event_node(&mut self, index: u64, id: &NodeId, values: &[f64]) -> Result<()> {
        self.check(RecordKind::EventNode, values)?;
        self.row.extend([index.to_string(), id.to_string()]);
        self.finish_row(values)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Flushes and returns the number of data rows written.
    pub fn finish(mut self) -> Result<usize> {
        self.inner.flush()?;
        Ok(self.rows)
    }
}

/// Writes a header and one row per record; returns the row count.
pub fn write_embeddings(
    sink: impl Write,
    kind: RecordKind,
    records: &[EmbeddingRecord],
    layout: &EmbeddingLayout,
) -> Result<usize> {
    let mut w = EmbeddingWriter::new(sink, kind, layout)?;
    for r in records {
        match r {
            EmbeddingRecord::Node { id, values } => w.write_node(id, values)?,
            EmbeddingRecord::Event {
                index,
                source,
                destination,
                values,
            } => w.write_event(*index, source, destination, values)?,
            EmbeddingRecord::EventNode { index, id, values } => w.write_event_node(*index, id, values)?,
        }
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(names: &[&str]) -> EmbeddingLayout {
        EmbeddingLayout {
            names: names.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn sig9_rendering() {
        assert_eq!(format_sig9(0.75), "0.75");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(2.0 / 3.0), "0.666666667");
        assert_eq!(format_sig9(7.0), "7");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(1234567891.0), "1.23456789e9");
        assert_eq!(format_sig9(1.5e-7), "1.5e-7");
        assert_eq!(format_sig9(0.0001234), "0.0001234");
        assert_eq!(format_sig9(9.9999999999), "10");
    }

    #[test]
    fn sig9_is_close() {
        for v in [0.1, 1.0 / 7.0, 12345.678912345, 3.3e-12, 9.87654321e20] {
            let back: f64 = format_sig9(v).parse().unwrap();
            assert!(((back - v) / v).abs() <= 5e-9, "{v}");
        }
    }

    #[test]
    fn node_table() {
        let mut out = Vec::new();
        let rows = vec![EmbeddingRecord::Node {
            id: "a".into(),
            values: vec![0.25, 0.75],
        }];
        let n = write_embeddings(&mut out, RecordKind::Node, &rows, &layout(&["f:bin_0", "f:bin_1"])).unwrap();
        assert_eq!(n, 1);
        assert_eq!(String::from_utf8(out).unwrap(), "node_id,f:bin_0,f:bin_1\na,0.25,0.75\n");
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut out = Vec::new();
        let n = write_embeddings(&mut out, RecordKind::Event, &[], &layout(&["x"])).unwrap();
        assert_eq!(n, 0);
        assert_eq!(String::from_utf8(out).unwrap(), "event_index,source_id,destination_id,x\n");
    }

    #[test]
    fn inconsistent_rows_are_rejected() {
        let l = layout(&["x", "y"]);
        let short = vec![EmbeddingRecord::Node {
            id: "a".into(),
            values: vec![1.0],
        }];
        assert!(matches!(
            write_embeddings(Vec::new(), RecordKind::Node, &short, &l),
            Err(Error::Structural(_))
        ));
        let wrong_kind = vec![EmbeddingRecord::Event {
            index: 0,
            source: "a".into(),
            destination: "b".into(),
            values: vec![1.0, 2.0],
        }];
        assert!(write_embeddings(Vec::new(), RecordKind::Node, &wrong_kind, &l).is_err());
    }
}
