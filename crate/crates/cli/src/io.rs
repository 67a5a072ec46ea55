use std::fmt;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use tempfile::NamedTempFile;

/// A failure plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_IO: u8 = 2;

impl CliError {
    pub fn validation(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }

    pub fn io(path: &Path, err: impl fmt::Display) -> Self {
        CliError {
            code: EXIT_IO,
            message: format!("{}: {err}", path.display()),
        }
    }

    pub fn at(path: &Path, err: gecforge::Error) -> Self {
        let code = if err.is_io() {
            EXIT_IO
        } else {
            EXIT_VALIDATION
        };
        CliError {
            code,
            message: format!("{}: {err}", path.display()),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<gecforge::Error> for CliError {
    fn from(err: gecforge::Error) -> Self {
        let code = if err.is_io() {
            EXIT_IO
        } else {
            EXIT_VALIDATION
        };
        CliError {
            code,
            message: err.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

/// Opens a file for reading; `-` is stdin.
pub fn open(path: &Path) -> CliResult<Box<dyn BufRead>> {
    if is_stdio(path) {
        return Ok(Box::new(BufReader::new(io::stdin())));
    }
    let f = File::open(path).map_err(|e| CliError::io(path, e))?;
    Ok(Box::new(BufReader::with_capacity(1 << 20, f)))
}

pub fn read_string(path: &Path) -> CliResult<String> {
    let mut s = String::new();
    open(path)?
        .read_to_string(&mut s)
        .map_err(|e| CliError::io(path, e))?;
    Ok(s)
}

/// Runs a loader over a file, tagging failures with the path.
pub fn load<T>(
    path: &Path,
    f: impl FnOnce(Box<dyn BufRead>) -> gecforge::Result<T>,
) -> CliResult<T> {
    f(open(path)?).map_err(|e| CliError::at(path, e))
}

/// Output that only appears at its destination once `commit` succeeds.
/// Files are written to a sibling temp file and renamed into place; `-`
/// streams to stdout, and devices or pipes are written in place.
pub struct Output {
    path: PathBuf,
    sink: Sink,
}

enum Sink {
    File(BufWriter<NamedTempFile>),
    Direct(BufWriter<File>),
    Stdout(BufWriter<io::Stdout>),
}

impl Output {
    pub fn create(path: &Path) -> CliResult<Self> {
        // Renaming over a symlink would replace the link itself, so write
        // next to its target instead.
        let path = match std::fs::symlink_metadata(path) {
            Ok(m) if m.file_type().is_symlink() => {
                std::fs::canonicalize(path).map_err(|e| CliError::io(path, e))?
            }
            _ => path.to_owned(),
        };
        let path = path.as_path();
        let special = std::fs::metadata(path).is_ok_and(|m| !m.is_file());
        let sink = if is_stdio(path) {
            Sink::Stdout(BufWriter::new(io::stdout()))
        } else if special {
            // Devices and pipes cannot be replaced atomically.
            let f = std::fs::OpenOptions::new()
                .write(true)
                .open(path)
                .map_err(|e| CliError::io(path, e))?;
            Sink::Direct(BufWriter::new(f))
        } else {
            let dir = match path.parent() {
                Some(p) if !p.as_os_str().is_empty() => p,
                _ => Path::new("."),
            };
            let tmp = tempfile::Builder::new()
                .prefix(".gecforge-")
                .tempfile_in(dir)
                .map_err(|e| CliError::io(path, e))?;
            Sink::File(BufWriter::with_capacity(1 << 20, tmp))
        };
        Ok(Output {
            path: path.to_owned(),
            sink,
        })
    }

    pub fn commit(self) -> CliResult<()> {
        let path = self.path;
        match self.sink {
            Sink::Stdout(mut w) => w.flush().map_err(|e| CliError::io(&path, e)),
            Sink::Direct(mut w) => w.flush().map_err(|e| CliError::io(&path, e)),
            Sink::File(w) => {
                let tmp = w.into_inner().map_err(|e| CliError::io(&path, e.error()))?;
                tmp.persist(&path)
                    .map_err(|e| CliError::io(&path, e.error))?;
                Ok(())
            }
        }
    }
}

impl Write for Output {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        match &mut self.sink {
            Sink::File(w) => w.write(buf),
            Sink::Direct(w) => w.write(buf),
            Sink::Stdout(w) => w.write(buf),
        }
    }

    fn write_all(&mut self, buf: &[u8]) -> io::Result<()> {
        match &mut self.sink {
            Sink::File(w) => w.write_all(buf),
            Sink::Direct(w) => w.write_all(buf),
            Sink::Stdout(w) => w.write_all(buf),
        }
    }

    fn flush(&mut self) -> io::Result<()> {
        match &mut self.sink {
            Sink::File(w) => w.flush(),
            Sink::Direct(w) => w.flush(),
            Sink::Stdout(w) => w.flush(),
        }
    }
}

/// Creates `path`, lets `f` fill it, and commits only if `f` succeeds.
pub fn write_with(
    path: &Path,
    f: impl FnOnce(&mut Output) -> gecforge::Result<()>,
) -> CliResult<()> {
    let mut out = Output::create(path)?;
    f(&mut out).map_err(|e| CliError::at(path, e))?;
    out.commit()
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    write_with(path, |w| Ok(w.write_all(text.as_bytes())?))
}
