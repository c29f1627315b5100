//! Run directories, CSV tables and the manifest.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use lga_core::synthdata::format_real;

use crate::config::{Experiment, RunConfig};
use crate::error::CliResult;

/// Optional number as a CSV cell: 17 significant digits, empty when absent.
pub fn cell(v: Option<f64>) -> String {
    v.map(format_real).unwrap_or_default()
}

pub fn num(v: f64) -> String {
    format_real(v)
}

/// Header-first CSV with LF line endings.
pub struct Table {
    writer: csv::Writer<BufWriter<File>>,
    width: usize,
    path: PathBuf,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Table> {
        let file = BufWriter::new(File::create(path)?);
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(file);
        writer.write_record(header)?;
        Ok(Table {
            writer,
            width: header.len(),
            path: path.to_path_buf(),
        })
    }

    pub fn row(&mut self, fields: &[String]) -> CliResult<()> {
        debug_assert_eq!(
            fields.len(),
            self.width,
            "row width for {}",
            self.path.display()
        );
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> CliResult<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    f.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub experiment: &'a str,
    pub version: &'a str,
    pub seed: u64,
    pub trials: usize,
    pub preset: &'a str,
    pub wall_time_s: f64,
    pub status: &'a str,
    pub artifacts: Vec<String>,
}

/// Output directory of one run.
pub struct RunDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl RunDir {
    /// Create the directory and write the resolved configuration into it.
    pub fn create(root: &Path, cfg: &RunConfig) -> CliResult<RunDir> {
        fs::create_dir_all(root)?;
        fs::write(root.join("config.toml"), cfg.to_toml()?)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            artifacts: vec!["config.toml".into()],
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn table(&mut self, name: &str, header: &[&str]) -> CliResult<Table> {
        self.artifacts.push(name.to_string());
        Table::create(&self.path(name), header)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        self.artifacts.push(name.to_string());
        write_json(&self.path(name), value)
    }

    pub fn finish(
        mut self,
        experiment: Experiment,
        cfg: &RunConfig,
        wall_time_s: f64,
        status: &str,
    ) -> CliResult<PathBuf> {
        self.artifacts.push("manifest.json".into());
        let manifest = Manifest {
            experiment: experiment.name(),
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            trials: cfg.trials,
            preset: match cfg.preset {
                crate::config::Preset::Desk => "desk",
                crate::config::Preset::Paper => "paper",
            },
            wall_time_s,
            status,
            artifacts: self.artifacts.clone(),
        };
        write_json(&self.path("manifest.json"), &manifest)?;
        Ok(self.root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_use_lf_and_full_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let mut t = Table::create(&path, &["a", "b"]).unwrap();
        t.row(&[num(0.1), cell(None)]).unwrap();
        t.finish().unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text, "a,b\n1.0000000000000001e-1,\n");
        assert_eq!(num(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
