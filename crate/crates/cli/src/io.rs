//! File helpers: whole-file atomic writes and query input sources.

use std::io::Read;
use std::path::{Path, PathBuf};

use crate::CliError;

/// Write via a temp file in the same directory plus rename, so readers
/// never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let file_name = path
        .file_name()
        .ok_or_else(|| CliError::usage(format!("output path {} has no file name", path.display())))?;
    let tmp = parent.join(format!(".{}.tmp-{}", file_name.to_string_lossy(), std::process::id()));
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::usage(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path).map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        CliError::usage(format!("cannot write {}: {e}", path.display()))
    })
}

/// Resolve the rank command's query source to bytes.
pub fn read_query(
    inline: Option<&str>,
    file: Option<&Path>,
    stdin: bool,
) -> Result<Vec<u8>, CliError> {
    let query = if let Some(text) = inline {
        text.as_bytes().to_vec()
    } else if let Some(path) = file {
        std::fs::read(path)
            .map_err(|e| CliError::usage(format!("cannot read query file {}: {e}", path.display())))?
    } else if stdin {
        let mut buffer = Vec::new();
        std::io::stdin()
            .read_to_end(&mut buffer)
            .map_err(|e| CliError::usage(format!("cannot read query from stdin: {e}")))?;
        buffer
    } else {
        return Err(CliError::usage("no query source given"));
    };
    if query.is_empty() {
        return Err(CliError::usage("query is empty"));
    }
    Ok(query)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        // No temp files left behind.
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn unwritable_output_is_a_usage_error() {
        let err = write_atomic(Path::new("/nonexistent-dir/out.json"), b"x");
        assert!(matches!(err, Err(CliError::Usage(_))));
    }

    #[test]
    fn empty_query_is_rejected() {
        assert!(matches!(read_query(Some(""), None, false), Err(CliError::Usage(_))));
        assert_eq!(read_query(Some("q"), None, false).unwrap(), b"q");
    }
}
