//! Append-only JSON-lines event log, one file per session.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Result, ServiceError};
use crate::session::Event;

const SUFFIX: &str = "jsonl";

#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
}

fn log_err(path: &Path) -> impl FnOnce(std::io::Error) -> ServiceError + '_ {
    move |source| ServiceError::Log { path: path.display().to_string(), source }
}

impl EventLog {
    /// Starts a new log with its first event. Fails if the file exists.
    pub fn create(dir: &Path, session_id: &str, first: &Event) -> Result<Self> {
        fs::create_dir_all(dir).map_err(log_err(dir))?;
        let path = dir.join(format!("{session_id}.{SUFFIX}"));
        let file = OpenOptions::new().append(true).create_new(true).open(&path).map_err(log_err(&path))?;
        let mut log = EventLog { path, file };
        log.append(first)?;
        Ok(log)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Writes one line and syncs it to disk before returning.
    pub fn append(&mut self, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).expect("events serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(log_err(&self.path))?;
        self.file.sync_data().map_err(log_err(&self.path))
    }

    /// Reads a log back. A last line that is incomplete or unparsable (a
    /// write cut short by a crash) is dropped and truncated away; damage
    /// anywhere else is an error.
    pub fn open(path: &Path) -> Result<(Self, Vec<Event>)> {
        let reader = BufReader::new(File::open(path).map_err(log_err(path))?);
        let mut events = Vec::new();
        let mut good_len: u64 = 0;
        let mut torn = false;
        for line in reader.split(b'\n') {
            let line = line.map_err(log_err(path))?;
            if torn {
                return Err(ServiceError::Replay {
                    session: path.display().to_string(),
                    message: "unreadable event before the end of the log".into(),
                });
            }
            match serde_json::from_slice::<Event>(&line) {
                Ok(e) => {
                    events.push(e);
                    good_len += line.len() as u64 + 1;
                }
                Err(_) if line.iter().all(u8::is_ascii_whitespace) => good_len += line.len() as u64 + 1,
                Err(_) => torn = true,
            }
        }
        let file = OpenOptions::new().append(true).open(path).map_err(log_err(path))?;
        let len = file.metadata().map_err(log_err(path))?.len();
        if good_len < len {
            file.set_len(good_len).map_err(log_err(path))?;
            file.sync_data().map_err(log_err(path))?;
        } else if good_len > len {
            // Final line parsed but lacks its newline.
            let mut file = file;
            file.write_all(b"\n").map_err(log_err(path))?;
            return Ok((EventLog { path: path.to_path_buf(), file }, events));
        }
        Ok((EventLog { path: path.to_path_buf(), file }, events))
    }

    /// All session logs in `dir`, sorted by file name.
    pub fn discover(dir: &Path) -> Result<Vec<PathBuf>> {
        if !dir.exists() {
            return Ok(Vec::new());
        }
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(log_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == SUFFIX))
            .collect();
        paths.sort();
        Ok(paths)
    }
}
