use crate::CliError;
use lfcoal::tree::{read_trees, TreeFormat};
use lfcoal::DepthSeq;
use std::io::{self, Write};
use std::path::Path;

/// Writes through a temporary file in the target directory, then renames it
/// into place. Without a path the bytes go to standard output.
pub fn emit(path: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), CliError> {
    match path {
        None => {
            let stdout = io::stdout();
            let mut lock = stdout.lock();
            write(&mut lock).map_err(|e| CliError::io("standard output", e))?;
            lock.flush().map_err(|e| CliError::io("standard output", e))
        }
        Some(path) => {
            let dir = match path.parent() {
                Some(d) if !d.as_os_str().is_empty() => d,
                _ => Path::new("."),
            };
            let shown = path.display().to_string();
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(&shown, e))?;
            {
                let mut buf = io::BufWriter::new(tmp.as_file_mut());
                write(&mut buf).map_err(|e| CliError::io(&shown, e))?;
                buf.flush().map_err(|e| CliError::io(&shown, e))?;
            }
            tmp.persist(path).map_err(|e| CliError::io(&shown, e.error))?;
            Ok(())
        }
    }
}

pub fn read_input(path: &Path, format: Option<TreeFormat>) -> Result<Vec<DepthSeq>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage {
        message: format!("cannot read {}: {e}", path.display()),
        remedy: "pass an existing tree file with --in".into(),
    })?;
    read_trees(&text, format).map_err(|e| CliError::Usage {
        message: format!("{}: {e}", path.display()),
        remedy: "supply JSON-lines or Newick trees, or set --format".into(),
    })
}
