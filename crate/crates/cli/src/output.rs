use std::io::{self, Write};
use std::path::PathBuf;

use gapforge::fmt_real;
use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::{Format, RunConfig};
use crate::pipeline::Report;

/// Pretty JSON with every real in the fixed 17-digit form.
struct FixedReals<'a>(PrettyFormatter<'a>);

impl Formatter for FixedReals<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        w.write_all(fmt_real(value).as_bytes())
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Deterministic JSON text of any serializable value, newline-terminated.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, FixedReals(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("serializing to memory");
    buf.push(b'\n');
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

/// Text for stdout in the requested format. CSV falls back to the JSON
/// report when the command produced no table.
pub fn render(report: &Report, format: Format) -> String {
    match (format, &report.table) {
        (Format::Csv, Some(table)) if report.error.is_none() => table.clone(),
        _ => to_json(report),
    }
}

/// Writes `<command>.json` into the output directory, plus `<command>.csv`
/// when a table exists; without a directory, prints the rendered report.
pub fn emit(cfg: &RunConfig, report: &Report) -> io::Result<Vec<PathBuf>> {
    let Some(dir) = &cfg.out else {
        io::stdout().write_all(render(report, cfg.format).as_bytes())?;
        return Ok(Vec::new());
    };
    let mut written = Vec::new();
    let json = dir.join(format!("{}.json", report.command));
    std::fs::write(&json, to_json(report))?;
    written.push(json);
    if let Some(table) = &report.table {
        let csv = dir.join(format!("{}.csv", report.command));
        std::fs::write(&csv, table)?;
        written.push(csv);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_use_seventeen_digits() {
        let text = to_json(&serde_json::json!({"x": 0.1, "k": 3, "v": [1.0, -2.5]}));
        assert!(text.contains("\"x\": 1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"k\": 3"), "{text}");
        assert!(text.contains("-2.5000000000000000e0"), "{text}");
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
    }
}
