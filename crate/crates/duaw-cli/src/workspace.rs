//! Workspace layout, lock file, and overwrite guard. All artifacts of a
//! pipeline run live under one root directory:
//!
//! ```text
//! <root>/data/{train,holdout}/   PNG images + manifest.tsv
//! <root>/weights/                VAE / generator containers
//! <root>/watermark/              watermark container + visualization
//! <root>/custom/                 fine-tuned weights / adapters
//! <root>/reports/                experiment reports + contact sheets
//! <root>/logs/                   resolved config per command
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use duaw_core::{DuawError, Result};

const LOCK_NAME: &str = ".duaw.lock";

/// Exclusive workspace handle; the lock file is removed on drop.
#[derive(Debug)]
pub struct Workspace {
    root: PathBuf,
    force: bool,
}

impl Workspace {
    /// Acquire the workspace, creating the directory tree and the lock
    /// file. A pre-existing lock means another process owns the root.
    pub fn acquire(root: &Path, force: bool) -> Result<Workspace> {
        fs::create_dir_all(root)?;
        for sub in ["data", "weights", "watermark", "custom", "reports", "logs"] {
            fs::create_dir_all(root.join(sub))?;
        }
        let lock = root.join(LOCK_NAME);
        match fs::OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                return Err(DuawError::Io(std::io::Error::new(
                    std::io::ErrorKind::AlreadyExists,
                    format!(
                        "workspace {} is locked by another process (remove {} if stale)",
                        root.display(),
                        lock.display()
                    ),
                )));
            }
            Err(e) => return Err(e.into()),
        }
        Ok(Workspace {
            root: root.to_path_buf(),
            force,
        })
    }

    pub fn train_data_dir(&self) -> PathBuf {
        self.root.join("data").join("train")
    }

    pub fn holdout_data_dir(&self) -> PathBuf {
        self.root.join("data").join("holdout")
    }

    pub fn vae_path(&self, variant: &str) -> PathBuf {
        if variant == "base" {
            self.root.join("weights").join("vae.duaw")
        } else {
            self.root.join("weights").join(format!("vae-{}.duaw", variant))
        }
    }

    pub fn generator_path(&self, variant: &str) -> PathBuf {
        if variant == "base" {
            self.root.join("weights").join("gen.duaw")
        } else {
            self.root.join("weights").join(format!("gen-{}.duaw", variant))
        }
    }

    pub fn watermark_path(&self) -> PathBuf {
        self.root.join("watermark").join("duaw.duaw")
    }

    pub fn watermark_viz_path(&self) -> PathBuf {
        self.root.join("watermark").join("duaw.png")
    }

    pub fn custom_path(&self, mode: &str, arm: &str) -> PathBuf {
        self.root.join("custom").join(format!("{}-{}.duaw", mode, arm))
    }

    pub fn report_path(&self, name: &str, ext: &str) -> PathBuf {
        self.root.join("reports").join(format!("{}.{}", name, ext))
    }

    pub fn log_path(&self, command: &str) -> PathBuf {
        self.root.join("logs").join(format!("{}.log", command))
    }

    /// Refuse to overwrite an existing output unless --force was given.
    pub fn guard_output(&self, path: &Path) -> Result<()> {
        if path.exists() && !self.force {
            return Err(DuawError::InvalidArg(format!(
                "output {} already exists; pass --force to overwrite",
                path.display()
            )));
        }
        Ok(())
    }

    /// Precise diagnostic for a required upstream artifact.
    pub fn require(&self, path: &Path, produced_by: &str) -> Result<()> {
        if !path.exists() {
            return Err(DuawError::MissingArtifact(format!(
                "{} not found; run `duaw {}` first",
                path.display(),
                produced_by
            )));
        }
        Ok(())
    }

    /// Write the resolved configuration and seed next to the artifacts
    /// so every run is reproducible from its log alone.
    pub fn write_log(&self, command: &str, resolved_config: &str, lines: &[String]) -> Result<()> {
        let mut text = String::new();
        text.push_str(&format!("# duaw {}\n", command));
        for line in lines {
            text.push_str(line);
            text.push('\n');
        }
        text.push_str("\n# resolved config\n");
        text.push_str(resolved_config);
        fs::write(self.log_path(command), text)?;
        Ok(())
    }
}

impl Drop for Workspace {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_NAME));
    }
}
