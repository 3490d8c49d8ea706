use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

/// Flat `key = value` report, written as TOML in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Report {
    entries: Vec<(String, String)>,
}

fn float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:?}")
    }
}

impl Report {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, key: &str, value: String) -> &mut Self {
        self.entries.push((key.to_string(), value));
        self
    }

    pub fn num(&mut self, key: &str, v: f64) -> &mut Self {
        self.push(key, float(v))
    }

    pub fn int(&mut self, key: &str, v: impl Into<i128>) -> &mut Self {
        self.push(key, v.into().to_string())
    }

    pub fn text(&mut self, key: &str, v: &str) -> &mut Self {
        self.push(key, format!("{v:?}"))
    }

    pub fn flag(&mut self, key: &str, v: bool) -> &mut Self {
        self.push(key, v.to_string())
    }

    pub fn nums(&mut self, key: &str, vs: &[f64]) -> &mut Self {
        let items: Vec<String> = vs.iter().map(|&v| float(v)).collect();
        self.push(key, format!("[{}]", items.join(", ")))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.render())?;
        Ok(())
    }
}

/// A CSV table with a fixed header.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<String>) {
        debug_assert_eq!(cells.len(), self.header.len());
        self.rows.push(cells);
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Cell formatting shared by every table.
pub fn cell(v: f64) -> String {
    float(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_parseable_toml() {
        let mut r = Report::new();
        r.num("acc", 1.0).int("runs", 3u32).text("name", "a \"b\"").nums("xs", &[0.5, f64::NAN]).flag("ok", true);
        let parsed: toml::Table = toml::from_str(&r.render()).unwrap();
        assert_eq!(parsed["acc"].as_float(), Some(1.0));
        assert_eq!(parsed["runs"].as_integer(), Some(3));
        assert_eq!(parsed["name"].as_str(), Some("a \"b\""));
        assert!(parsed["xs"].as_array().unwrap()[1].as_float().unwrap().is_nan());
        assert_eq!(r.get("ok"), Some("true"));
    }
}
