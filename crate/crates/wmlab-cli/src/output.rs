//! Output-directory bookkeeping. Artifacts are registered as they are
//! written and listed in a `manifest.json` next to them, together with the
//! resolved config, its hash, the seed, and the resolution — so every file
//! on disk is traceable to exactly one run.

use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::Config;

pub struct RunDir {
    root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    pub fn create(root: PathBuf) -> std::io::Result<Self> {
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, files: Vec::new() })
    }

    /// Register `name` as an artifact of this run and return its path.
    pub fn file(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.root.join(name)
    }

    /// Consumes the run: after the manifest is on disk the file list is
    /// final.
    pub fn write_manifest(
        mut self,
        command: &str,
        config: &Config,
        seed: Option<u64>,
        resolution: Option<(usize, usize)>,
    ) -> std::io::Result<()> {
        self.files.sort();
        let manifest = json!({
            "schema_version": wmlab::io::SCHEMA_VERSION,
            "command": command,
            "config_sha256": config.sha256_hex(),
            "config": config.as_json(),
            "seed": seed,
            "n": resolution.map(|r| r.0),
            "k": resolution.map(|r| r.1),
            "versions": {
                "wmlab": wmlab::VERSION,
                "wmlab-cli": env!("CARGO_PKG_VERSION"),
            },
            "files": self.files,
        });
        let mut text = serde_json::to_string_pretty(&manifest).expect("static shape");
        text.push('\n');
        std::fs::write(self.root.join("manifest.json"), text)
    }
}

/// Emit a gnuplot script for a CSV this run produced. Plotting stays a
/// separate, optional step: the run itself never renders anything.
pub fn write_plot_script(
    path: &Path,
    csv: &str,
    columns: &str,
    xlabel: &str,
    ylabel: &str,
    log_y: bool,
) -> std::io::Result<()> {
    let mut s = String::new();
    s.push_str("set datafile separator \",\"\n");
    s.push_str("set key off\n");
    s.push_str(&format!("set xlabel \"{xlabel}\"\n"));
    s.push_str(&format!("set ylabel \"{ylabel}\"\n"));
    if log_y {
        s.push_str("set logscale y\n");
    }
    s.push_str(&format!("plot \"{csv}\" using {columns} with lines\n"));
    std::fs::write(path, s)
}
