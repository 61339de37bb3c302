//! Number formatting shared by the JSON and CSV writers: every float is
//! printed with 17 significant digits so values round-trip exactly.

use serde::Serialize;
use std::io::{self, Write};

pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{v:.16e}")
    }
}

struct Sig17;

impl serde_json::ser::Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        // serde_json maps non-finite floats to null before reaching here.
        w.write_all(fmt_f64(v).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        self.write_f64(w, f64::from(v))
    }
}

/// One JSON document on a single line, followed by a newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    value.serialize(&mut ser).expect("in-memory JSON serialization");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// A CSV cell: floats at 17 digits, everything else via `Display`.
pub enum Cell {
    F(f64),
    U(usize),
    S(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::F(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::U(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::S(v.into())
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::F(v.unwrap_or(f64::NAN))
    }
}

pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).expect("in-memory CSV write");
        Self { writer }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        let fields: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::F(v) => fmt_f64(v),
                Cell::U(v) => v.to_string(),
                Cell::S(s) => s,
            })
            .collect();
        self.writer.write_record(&fields).expect("in-memory CSV write");
    }

    pub fn finish(self) -> String {
        let bytes = self.writer.into_inner().expect("in-memory CSV flush");
        String::from_utf8(bytes).expect("CSV of UTF-8 fields")
    }
}
