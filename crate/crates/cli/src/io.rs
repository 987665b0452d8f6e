//! On-disk formats: CSV tables with a provenance preamble and versioned JSON.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::config::ConfigError;

pub const SCHEMA_VERSION: u32 = 1;

/// Configuration hash and seeds embedded in every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
}

impl Provenance {
    fn preamble(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("# config_hash: {}\n# seeds: {}\n", self.config_hash, seeds.join(" "))
    }

    /// XML comment for SVG files.
    pub fn svg_comment(&self) -> String {
        let seeds: Vec<String> = self.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!("<!-- config_hash: {} seeds: {} -->", self.config_hash, seeds.join(" "))
    }
}

/// Full-precision scientific notation; non-finite values are written as `nan`, `inf`, `-inf`.
pub fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.16e}")
    }
}

/// Write a numeric table with LF line endings.
pub fn write_csv(
    path: &Path,
    prov: &Provenance,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<f64>>,
) -> Result<()> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(prov.preamble().as_bytes())?;
    w.write_all(header.join(",").as_bytes())?;
    w.write_all(b"\n")?;
    let mut line = String::new();
    for row in rows {
        if row.len() != header.len() {
            bail!("row has {} values for {} columns", row.len(), header.len());
        }
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&fmt(*v));
        }
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Numeric table read back from [`write_csv`] output.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.header
            .iter()
            .position(|h| h == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| anyhow!(ConfigError(format!("missing column '{name}'"))))
    }
}

pub fn read_csv(path: &Path) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| anyhow!(ConfigError(format!("cannot read {}: {e}", path.display()))))?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut columns = vec![Vec::new(); header.len()];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                anyhow!(ConfigError(format!("{} row {}: '{field}' is not a number", path.display(), i + 1)))
            })?;
            columns[c].push(v);
        }
    }
    Ok(Table { header, columns })
}

/// JSON document with schema version, kind and provenance at the top level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document<T> {
    pub schema_version: u32,
    pub kind: String,
    #[serde(flatten)]
    pub provenance: Provenance,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, kind: &str, prov: &Provenance, body: &T) -> Result<()> {
    let doc = Document { schema_version: SCHEMA_VERSION, kind: kind.to_string(), provenance: prov.clone(), body };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path, kind: &str) -> Result<Document<T>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!(ConfigError(format!("cannot read {}: {e}", path.display()))))?;
    let doc: Document<T> =
        serde_json::from_str(&text).map_err(|e| anyhow!(ConfigError(format!("{}: {e}", path.display()))))?;
    if doc.schema_version != SCHEMA_VERSION {
        bail!(ConfigError(format!("{}: unsupported schema_version {}", path.display(), doc.schema_version)));
    }
    if doc.kind != kind {
        bail!(ConfigError(format!("{}: expected a '{kind}' document, found '{}'", path.display(), doc.kind)));
    }
    Ok(doc)
}

/// Kind field of a JSON document without parsing its body.
pub fn peek_kind(path: &Path) -> Result<String> {
    #[derive(Deserialize)]
    struct Head {
        kind: String,
    }
    let text = std::fs::read_to_string(path)
        .map_err(|e| anyhow!(ConfigError(format!("cannot read {}: {e}", path.display()))))?;
    let head: Head =
        serde_json::from_str(&text).map_err(|e| anyhow!(ConfigError(format!("{}: {e}", path.display()))))?;
    Ok(head.kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = std::env::temp_dir().join(format!("nnmid-io-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        let prov = Provenance { config_hash: "abc".into(), seeds: BTreeMap::from([("noise".into(), 3)]) };
        let rows = vec![vec![0.1, -1.0 / 3.0], vec![1e-300, 6.02214076e23]];
        write_csv(&path, &prov, &["a", "b"], rows.clone()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash: abc\n# seeds: noise=3\na,b\n"));
        assert!(!text.contains('\r'));
        let t = read_csv(&path).unwrap();
        assert_eq!(t.column("a").unwrap(), &[0.1, 1e-300]);
        assert_eq!(t.column("b").unwrap(), &[-1.0 / 3.0, 6.02214076e23]);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
