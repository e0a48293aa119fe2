//! Artifact writing: atomic replacement, ordered streaming and log resume.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use metaharness::evalkit::{read_log, LogRecord};

use crate::error::CliError;

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir.display(), e))
}

/// Replace `path` with `bytes` through a temporary sibling, so readers never
/// observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let result = (|| {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(|e| CliError::io(path.display(), e))
}

/// Accepts lines tagged with their input position and writes them strictly
/// in position order; a line is written once every earlier line has been.
pub struct OrderedWriter<W: Write> {
    inner: W,
    next: usize,
    pending: BTreeMap<usize, String>,
}

impl<W: Write> OrderedWriter<W> {
    pub fn new(inner: W, first: usize) -> Self {
        OrderedWriter { inner, next: first, pending: BTreeMap::new() }
    }

    pub fn push(&mut self, index: usize, line: String) -> std::io::Result<()> {
        self.pending.insert(index, line);
        while let Some(line) = self.pending.remove(&self.next) {
            self.inner.write_all(line.as_bytes())?;
            self.next += 1;
        }
        self.inner.flush()
    }

    /// Position of the first line not yet written.
    pub fn next(&self) -> usize {
        self.next
    }
}

/// Open a trajectory log for a resumed run. A trailing line without its
/// newline is the remnant of an interrupted write and is cut off.
pub fn open_for_resume(path: &Path) -> Result<(Vec<LogRecord>, File), CliError> {
    let text = fs::read(path).map_err(|e| CliError::io(path.display(), e))?;
    let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let file = OpenOptions::new().read(true).write(true).open(path).map_err(|e| CliError::io(path.display(), e))?;
    if keep < text.len() {
        file.set_len(keep as u64).map_err(|e| CliError::io(path.display(), e))?;
    }
    let records = read_log(BufReader::new(&text[..keep])).map_err(CliError::from)?;
    let file = OpenOptions::new().append(true).open(path).map_err(|e| CliError::io(path.display(), e))?;
    Ok((records, file))
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRecord>, CliError> {
    let f = File::open(path).map_err(|e| CliError::io(path.display(), e))?;
    read_log(BufReader::new(f)).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
}
