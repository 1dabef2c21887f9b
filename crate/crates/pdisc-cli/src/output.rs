//! CSV and JSON artifacts. Every CSV ends with the effective config and a
//! `# pdisc-version=<v> seed=<s>` line.

use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Table {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// RFC-4180 body plus the trailing comment lines.
    pub fn render(&self, cfg: &RunConfig) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("write to memory");
        for r in &self.rows {
            w.write_record(r).expect("write to memory");
        }
        let mut s = String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is UTF-8");
        s.push_str(&format!("# config={}\n", cfg.to_json()));
        s.push_str(&format!("# pdisc-version={VERSION} seed={}\n", cfg.seed()));
        s
    }
}

/// Shortest round-trip form; exponent notation outside `[1e-5, 1e15)`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if a != 0.0 && a.is_finite() && !(1e-5..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn out_dir(cfg: &RunConfig) -> Result<Option<PathBuf>, CliError> {
    match &cfg.out {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| CliError::io(d, e))?;
            Ok(Some(d.clone()))
        }
        None => Ok(None),
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Writes `table` to `<out>/<name>` when an output directory is set, else to stdout.
pub fn emit(cfg: &RunConfig, name: &str, table: &Table) -> Result<(), CliError> {
    let text = table.render(cfg);
    match out_dir(cfg)? {
        Some(d) => write_file(&d.join(name), text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Pretty JSON with the effective config alongside the payload.
pub fn json_with_config<T: Serialize>(cfg: &RunConfig, key: &str, value: &T) -> String {
    let mut map = serde_json::Map::new();
    map.insert("pdisc_version".into(), VERSION.into());
    map.insert("config".into(), serde_json::to_value(cfg).expect("config serializes"));
    map.insert(key.into(), serde_json::to_value(value).expect("payload serializes"));
    let mut s = serde_json::to_string_pretty(&serde_json::Value::Object(map)).expect("json");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.5, -3.25e-9, 9.0965951490424e22, 513.1344886763228] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(7.0e22), "7e22");
    }

    #[test]
    fn render_quotes_and_trails_metadata() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x,y".into()]);
        let cfg = RunConfig { seed: Some(7), ..RunConfig::default() };
        let s = t.render(&cfg);
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "a,b");
        assert_eq!(lines[1], "1,\"x,y\"");
        assert_eq!(*lines.last().unwrap(), format!("# pdisc-version={VERSION} seed=7"));
    }
}
