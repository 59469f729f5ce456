//! On-disk format of `run` output.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use copyspec::engine::EngineConfig;
use copyspec::metrics::{records_from_csv, records_to_csv, MetricsRecord};
use copyspec::CostModel;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Per-turn records of one run plus the aggregate rows derived from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFile {
    pub corpus: String,
    pub config: EngineConfig,
    pub cost: CostModel,
    pub records: Vec<MetricsRecord>,
    pub aggregates: Vec<MetricsRecord>,
}

impl RunFile {
    pub fn render(&self, format: Format) -> Result<String> {
        Ok(match format {
            Format::Json => serde_json::to_string_pretty(self)? + "\n",
            Format::Csv => {
                let rows: Vec<MetricsRecord> = self.records.iter().chain(&self.aggregates).cloned().collect();
                records_to_csv(&rows)?
            }
        })
    }
}

/// Rows read back from a run file of either format.
pub fn read_records(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if text.trim_start().starts_with('{') {
        let run: RunFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(run.records.into_iter().chain(run.aggregates).collect())
    } else {
        records_from_csv(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

/// Writes `text` to `out`, or stdout when `out` is `None`. Files are written
/// to a temporary sibling first and renamed into place.
pub fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    let Some(path) = out else {
        std::io::stdout().write_all(text.as_bytes())?;
        return Ok(());
    };
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    if !dir.is_dir() {
        bail!("output directory {} does not exist", dir.display());
    }
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(text.as_bytes())?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file().set_permissions(fs::Permissions::from_mode(0o644))?;
    }
    tmp.persist(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
