use std::fs;
use std::path::{Path, PathBuf};

use amswarm_core::SolveReport;

use crate::error::{CliError, Result};

fn file_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::File {
        path: path.to_path_buf(),
        source,
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(file_error(dir))
}

/// Write via a sibling temporary file and rename, so readers never see a
/// partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    fs::write(&tmp, bytes).map_err(file_error(&tmp))?;
    fs::rename(&tmp, path).map_err(file_error(path))
}

pub fn csv_bytes<F>(fill: F) -> Result<Vec<u8>>
where
    F: FnOnce(&mut csv::Writer<Vec<u8>>) -> Result<()>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    fill(&mut w)?;
    w.into_inner().map_err(|e| CliError::Io(e.into_error()))
}

/// One `t,x,y,z` table per agent, named `agent_<i>.csv`.
pub fn write_agent_csvs(dir: &Path, report: &SolveReport) -> Result<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(report.n);
    for (i, traj) in report.trajectories.iter().enumerate() {
        let bytes = csv_bytes(|w| {
            w.write_record(["t", "x", "y", "z"])?;
            for (t, p) in report.times.iter().zip(traj) {
                w.serialize((t, p[0], p[1], p[2]))?;
            }
            Ok(())
        })?;
        let path = dir.join(format!("agent_{i}.csv"));
        write_atomic(&path, &bytes)?;
        written.push(path);
    }
    Ok(written)
}
