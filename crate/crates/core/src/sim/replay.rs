use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::SimError;
use crate::bridge::protocol::{decode_line, EegPayload, Message};
use crate::dsp::EegChunk;

/// Streams chunks from a JSON-lines file of `eeg` messages, enforcing
/// increasing timestamps and a constant rate and montage. Blank lines are
/// skipped.
pub struct ReplayReader<R> {
    lines: std::io::Lines<R>,
    line_no: u64,
    last: Option<EegChunk>,
    failed: bool,
}

impl<R: BufRead> ReplayReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: reader.lines(),
            line_no: 0,
            last: None,
            failed: false,
        }
    }

    fn parse(&mut self, line: &str) -> Result<EegChunk, SimError> {
        let parse_err = |message: String| SimError::Parse {
            line: self.line_no,
            message,
        };
        let payload = match decode_line(line) {
            Ok(Message::Eeg(p)) => p,
            Ok(other) => return Err(parse_err(format!("expected an eeg message, found {}", other.kind()))),
            Err(e) => return Err(parse_err(format!("byte {}: {}", e.offset, e.message))),
        };
        let chunk = payload.to_chunk(0).map_err(|e| parse_err(e.to_string()))?;
        if let Some(prev) = &self.last {
            if chunk.sample_rate() != prev.sample_rate() || chunk.channel_labels() != prev.channel_labels() {
                return Err(SimError::Config(format!(
                    "line {}: sample rate or channels differ from earlier chunks",
                    self.line_no
                )));
            }
            if chunk.start_time() <= prev.start_time() {
                return Err(SimError::Sequencing(format!(
                    "line {}: chunk at {} s does not follow chunk at {} s",
                    self.line_no,
                    chunk.start_time(),
                    prev.start_time()
                )));
            }
        }
        Ok(chunk)
    }
}

impl<R: BufRead> Iterator for ReplayReader<R> {
    type Item = Result<EegChunk, SimError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(SimError::Io(e.to_string())));
                }
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let result = self.parse(&line);
            match &result {
                Ok(chunk) => self.last = Some(chunk.clone()),
                Err(_) => self.failed = true,
            }
            return Some(result);
        }
    }
}

pub fn open_replay(path: &Path) -> Result<ReplayReader<BufReader<File>>, SimError> {
    let file = File::open(path).map_err(|e| SimError::Io(format!("{}: {e}", path.display())))?;
    Ok(ReplayReader::new(BufReader::new(file)))
}

/// Reads a whole chunk file.
pub fn load_replay(path: &Path) -> Result<Vec<EegChunk>, SimError> {
    open_replay(path)?.collect()
}

/// Appends one chunk as an `eeg` line.
pub fn write_chunk<W: Write>(out: &mut W, session_id: Option<&str>, chunk: &EegChunk) -> std::io::Result<()> {
    let line = Message::Eeg(EegPayload::from_chunk(session_id.map(str::to_owned), chunk)).to_line();
    writeln!(out, "{line}")
}
