//! External black-box densities over a stdio line protocol.
//!
//! The engine spawns the command under `sh -c`, performs a one-line
//! handshake (`HELLO defer 1 <D>` answered by `OK`), then streams one point
//! per line as D space-separated decimals and reads back one log-density per
//! line (`-inf` for zero density). Strict one-in/one-out ordering; a writer
//! thread feeds the batch while the reader drains, so pipe buffers cannot
//! deadlock.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use crate::engine::DensityFunction;
use crate::error::{DeferError, Result};

pub struct ExternalDensity {
    dim: usize,
    child: Child,
    stdin: Option<ChildStdin>,
    reader: BufReader<ChildStdout>,
    command: String,
}

impl ExternalDensity {
    /// Spawn `command` via the shell and run the handshake.
    pub fn spawn(command: &str, dim: usize) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| DeferError::Evaluation(format!("failed to spawn `{command}`: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let mut reader = BufReader::new(stdout);

        writeln!(stdin, "HELLO defer 1 {dim}")
            .map_err(|e| DeferError::Evaluation(format!("handshake write failed: {e}")))?;
        stdin
            .flush()
            .map_err(|e| DeferError::Evaluation(format!("handshake flush failed: {e}")))?;
        let mut line = String::new();
        reader
            .read_line(&mut line)
            .map_err(|e| DeferError::Evaluation(format!("handshake read failed: {e}")))?;
        if line.trim() != "OK" {
            let _ = child.kill();
            return Err(DeferError::Evaluation(format!(
                "handshake failed, expected OK, got {line:?}"
            )));
        }
        Ok(ExternalDensity {
            dim,
            child,
            stdin: Some(stdin),
            reader,
            command: command.to_string(),
        })
    }
}

impl DensityFunction for ExternalDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval_batch(&mut self, points: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let n = points.len() / self.dim;
        let dim = self.dim;
        let stdin = self.stdin.as_mut().expect("stdin open");
        let reader = &mut self.reader;
        let command = &self.command;

        std::thread::scope(|scope| -> Result<()> {
            let writer = scope.spawn(move || -> std::io::Result<()> {
                let mut buf = String::new();
                for p in points.chunks_exact(dim) {
                    buf.clear();
                    for (i, v) in p.iter().enumerate() {
                        if i > 0 {
                            buf.push(' ');
                        }
                        // Shortest round-trip decimal representation.
                        buf.push_str(&format!("{v}"));
                    }
                    buf.push('\n');
                    stdin.write_all(buf.as_bytes())?;
                }
                stdin.flush()
            });

            let mut line = String::new();
            for i in 0..n {
                line.clear();
                let read = reader
                    .read_line(&mut line)
                    .map_err(|e| DeferError::Evaluation(format!("read from `{command}`: {e}")))?;
                if read == 0 {
                    return Err(DeferError::Evaluation(format!(
                        "`{command}` closed its output after {i} of {n} replies"
                    )));
                }
                let trimmed = line.trim();
                let value: f64 = trimmed.parse().map_err(|_| {
                    DeferError::Evaluation(format!("malformed density line {trimmed:?}"))
                })?;
                if value.is_nan() {
                    return Err(DeferError::Evaluation(format!(
                        "density line {trimmed:?} is NaN"
                    )));
                }
                out.push(value);
            }

            writer
                .join()
                .expect("writer thread panicked")
                .map_err(|e| DeferError::Evaluation(format!("write to `{command}`: {e}")))
        })
    }
}

impl Drop for ExternalDensity {
    fn drop(&mut self) {
        // Closing stdin lets a well-behaved subprocess exit on EOF.
        self.stdin.take();
        let _ = self.child.wait();
    }
}
