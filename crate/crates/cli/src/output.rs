use std::fs;
use std::io;
use std::path::{Path, PathBuf};

/// Renders `name` in memory, writes it next to its destination and renames
/// it into place, so readers never observe a partial file.
pub fn write_atomic<F>(dir: &Path, name: &str, render: F) -> io::Result<PathBuf>
where
    F: FnOnce(&mut Vec<u8>) -> io::Result<()>,
{
    fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    render(&mut buf)?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, &buf)?;
    if let Err(e) = fs::rename(&tmp, &target) {
        let _ = fs::remove_file(&tmp);
        return Err(e);
    }
    Ok(target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        write_atomic(dir.path(), "a.txt", |w| w.write_all(b"first, longer")).unwrap();
        let p = write_atomic(dir.path(), "a.txt", |w| w.write_all(b"second")).unwrap();
        assert_eq!(fs::read_to_string(p).unwrap(), "second");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn failed_render_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let r = write_atomic(dir.path(), "b.txt", |_| Err(io::Error::other("boom")));
        assert!(r.is_err());
        assert!(!dir.path().join("b.txt").exists());
    }
}
