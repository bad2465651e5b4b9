//! CSV tables, trajectory files and run manifests.
//!
//! Reals are written in Rust's shortest round-trip decimal form, so reading a
//! file back reproduces every value bit for bit. Files are written to a
//! sibling temporary and renamed into place, so a failed run never leaves a
//! truncated result under the final name.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::model::{Termination, Trajectory};

pub const TRAJECTORY_HEADER: &str = "t_years,sigma_sq,w_f,price,n,l_b,p_lag,leverage,target_leverage,equity,assets_bank,relative_size,delta_b,status";

/// Shortest decimal that parses back to the same `f64`.
pub fn real(v: f64) -> String {
    v.to_string()
}

/// Empty field for a missing value.
pub fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

/// A header plus rows of preformatted fields.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn trajectory_table(traj: &Trajectory) -> Table {
    let mut t = Table::new(&TRAJECTORY_HEADER.split(',').collect::<Vec<_>>());
    for pt in &traj.points {
        let s = &pt.state;
        let d = &pt.derived;
        t.push(vec![
            real(pt.step as f64 * traj.tau),
            real(s.sigma_sq),
            real(s.w_f),
            real(s.p),
            real(s.n),
            real(s.l_b),
            real(s.p_lag),
            real(d.lambda),
            real(d.lambda_bar),
            real(d.e_b),
            real(d.a_b),
            real(d.r_size),
            real(d.delta_b),
            if pt.clamped { "clamped" } else { "live" }.to_string(),
        ]);
    }
    t
}

pub fn trajectory_csv(traj: &Trajectory) -> String {
    trajectory_table(traj).to_csv()
}

pub fn termination_label(t: &Termination) -> String {
    match t {
        Termination::Completed => "completed".into(),
        Termination::Diverged { step, reason } => format!("diverged at step {step} ({reason})"),
    }
}

/// Writes `contents` to `path` via a temporary sibling and a rename.
pub fn atomic_write(path: &Path, contents: &str) -> io::Result<()> {
    let with_path = |e: io::Error| io::Error::new(e.kind(), format!("{}: {e}", path.display()));
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(with_path)?;
    }
    let tmp = sibling(path, ".tmp");
    let res = fs::write(&tmp, contents).and_then(|_| fs::rename(&tmp, path));
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res.map_err(with_path)
}

pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> io::Result<()> {
    atomic_write(path, &trajectory_csv(traj))
}

/// `path` with `suffix` appended to the file name.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, ".manifest")
}

/// Provenance for one command run. Metadata lines are `#` comments, so the
/// manifest is itself a config that reproduces the run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: RunConfig,
    pub command: String,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub started_unix: u64,
    pub status: String,
}

impl RunManifest {
    pub fn new(config: &RunConfig, command: &str, status: &str) -> Self {
        let started_unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            config: config.clone(),
            command: command.to_string(),
            tool_version: format!("{} {}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
            started_unix,
            status: status.to_string(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# tool = {}", self.tool_version);
        let _ = writeln!(s, "# command = {}", self.command);
        let _ = writeln!(s, "# seed = {}", self.config.seed);
        let _ = writeln!(s, "# started_unix = {}", self.started_unix);
        let _ = writeln!(s, "# status = {}", self.status);
        s.push_str(&self.config.serialize());
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    #[test]
    fn real_round_trips() {
        for v in [0.1, 1e-300, -2.5e17, 1.0 / 3.0, f64::MIN_POSITIVE, 25.0] {
            assert_eq!(real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn manifest_parses_as_config() {
        let cfg = parse_config("alpha = 0.01\nseed = 9\n").unwrap();
        let m = RunManifest::new(&cfg, "simulate", "completed");
        assert_eq!(parse_config(&m.render()).unwrap(), cfg);
    }

    #[test]
    fn sibling_names() {
        assert_eq!(
            manifest_path(Path::new("out/run.csv")),
            PathBuf::from("out/run.csv.manifest")
        );
    }

    #[test]
    fn atomic_write_leaves_no_temporary() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/a.csv");
        atomic_write(&path, "x\n").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "x\n");
        assert!(!sibling(&path, ".tmp").exists());
    }
}
