use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use codemix::nn::Checkpoint;

use crate::error::CliError;

/// Files staged in memory and written together once a command succeeds.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    pub fn add_checkpoint(&mut self, name: &str, c: &Checkpoint) -> Result<(), CliError> {
        let mut buf = Vec::new();
        c.write_to(&mut buf)?;
        self.add(name, buf);
        Ok(())
    }

    /// Writes every file through a temporary sibling and a rename.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (name, bytes) in self.files {
            let path = dir.join(&name);
            write_atomic(&path, &bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}
