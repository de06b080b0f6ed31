//! CSV tables and run manifests.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use crate::config::RunConfig;
use crate::error::{Error, Result};

/// Float formatting used in every table: 17 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Buffered CSV writer with a mandatory header.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<std::fs::File>,
}

impl Table {
    /// Create `path`, optionally writing `# comment` lines before the header.
    pub fn create(path: &Path, comments: &[String], header: &[&str]) -> Result<Self> {
        use std::io::Write;
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        for c in comments {
            writeln!(file, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(header)?;
        Ok(Self { path: path.to_path_buf(), writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        Ok(self.writer.write_record(fields)?)
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// `git rev-parse HEAD` of the working directory, or `unknown`.
pub fn git_revision() -> String {
    Command::new("git")
        .args(["rev-parse", "HEAD"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map_or_else(|| "unknown".into(), |s| s.trim().to_string())
}

/// Write `manifest.txt`: the full configuration (readable back as a config
/// file) preceded by comment lines with the command, git revision, wall time
/// and output files.
pub fn write_manifest(
    dir: &Path,
    command: &str,
    cfg: &RunConfig,
    wall: Duration,
    outputs: &[PathBuf],
) -> Result<PathBuf> {
    let path = dir.join("manifest.txt");
    let mut text = format!(
        "# command = {command}\n# git_revision = {}\n# wall_time_s = {:.3}\n",
        git_revision(),
        wall.as_secs_f64()
    );
    for o in outputs {
        text.push_str(&format!("# output = {}\n", o.display()));
    }
    text.push_str(&cfg.render());
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
