use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::camera::{write_events_file, PhotonEvent};
use crate::{Error, Result};

/// A CSV table. Cells are pre-formatted so output is byte-stable.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.to_string(), header: header.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len(), "row width in table {}", self.name);
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.header.join(","))?;
        for row in &self.rows {
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()
    }
}

/// Formats anything displayable as a table cell.
pub fn cell(v: impl Display) -> String {
    v.to_string()
}

#[derive(Debug, Clone)]
pub struct EventDump {
    pub name: String,
    pub camera_id: u16,
    pub events: Vec<PhotonEvent>,
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub version: String,
    pub seed: u64,
    pub wall_clock_s: f64,
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
    pub summary: serde_json::Value,
    /// Names of the CSV files written next to the report.
    pub tables: Vec<String>,
    #[serde(skip)]
    pub table_data: Vec<Table>,
    #[serde(skip)]
    pub event_dumps: Vec<EventDump>,
}

impl ScenarioReport {
    pub fn table(&self, name: &str) -> Option<&Table> {
        self.table_data.iter().find(|t| t.name == name)
    }
}

/// Writes `report.json`, one CSV per table and any event dumps into `dir`.
pub fn write_report(report: &ScenarioReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for t in &report.table_data {
        let path = dir.join(format!("{}.csv", t.name));
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        t.write_csv(BufWriter::new(file)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    for d in &report.event_dumps {
        let path = dir.join(format!("{}.qcbt", d.name));
        write_events_file(&path, d.camera_id, &d.events)?;
        written.push(path);
    }
    let path = dir.join("report.json");
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::io(&path, std::io::Error::other(e)))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = Table::new("t", &["a", "b"]);
        t.push(vec![cell(1), cell(0.25)]);
        let mut out = Vec::new();
        t.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "a,b\n1,0.25\n");
        assert_eq!(t.column("b"), Some(vec!["0.25"]));
    }
}
