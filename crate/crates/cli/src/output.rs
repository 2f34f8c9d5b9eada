use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};

/// Build version, config hash and seeds named by every artifact.
#[derive(Debug, Clone)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
}

impl Provenance {
    pub fn seeds_text(&self) -> String {
        self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }

    pub fn comment_lines(&self) -> String {
        format!("# version: {}\n# config_hash: {}\n# seeds: {}\n", self.version, self.config_hash, self.seeds_text())
    }

    pub fn json(&self) -> serde_json::Value {
        serde_json::json!({ "version": self.version, "config_hash": self.config_hash, "seeds": self.seeds })
    }
}

pub type CsvOut = csv::Writer<BufWriter<File>>;

/// CSV file opened with the provenance comment block and the header row.
pub fn create_csv(path: &Path, prov: &Provenance, header: &[String]) -> Result<CsvOut> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = BufWriter::new(file);
    w.write_all(prov.comment_lines().as_bytes())?;
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header)?;
    Ok(csv)
}

/// Reads the data rows of a CSV written by [`create_csv`].
pub fn read_rows(path: &Path) -> Result<Vec<Vec<String>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        rows.push(rec?.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Resolved config with the provenance block on top; parses back to the
/// same config.
pub fn write_config(path: &Path, prov: &Provenance, text: &str) -> Result<()> {
    std::fs::write(path, format!("{}{text}", prov.comment_lines())).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
