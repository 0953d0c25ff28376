//! External predictor processes speaking a line protocol.
//!
//! Wire format, one line per message, `\n` terminated:
//!
//! ```text
//! engine -> predictor   RAAR/1 <d>          handshake, d = feature count
//! predictor -> engine   READY
//! engine -> predictor   v1,v2,...,vd        one query, 17 significant digits
//! predictor -> engine   <prediction>        a single decimal float
//! ```
//!
//! The engine closes its write stream to terminate the session; the
//! predictor must then exit with status 0. Any deviation from the exchange
//! above is a protocol error carrying the offending line.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::process::{Child, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::PredictorError;

struct ExternalIo {
    child: Child,
    // stdin is dropped on shutdown to signal end-of-stream.
    stdin: Option<BufWriter<std::process::ChildStdin>>,
    stdout: BufReader<ChildStdout>,
}

/// Handle to a spawned external predictor. Queries are serialized over the
/// stream pair, so concurrent callers queue on the internal lock.
pub struct ExternalPredictor {
    command: String,
    dim: usize,
    io: Mutex<ExternalIo>,
}

impl std::fmt::Debug for ExternalPredictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalPredictor")
            .field("command", &self.command)
            .field("dim", &self.dim)
            .finish()
    }
}

impl ExternalPredictor {
    /// Spawn `command` (split on whitespace) and perform the handshake for
    /// a `dim`-feature model.
    pub fn spawn(command: &str, dim: usize) -> Result<Self, PredictorError> {
        let mut parts = command.split_whitespace();
        let program = parts.next().ok_or_else(|| {
            PredictorError::Protocol("empty external predictor command".into())
        })?;
        let mut child = Command::new(program)
            .args(parts)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|source| PredictorError::Spawn {
                command: command.to_string(),
                source,
            })?;

        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");
        let mut io = ExternalIo {
            child,
            stdin: Some(BufWriter::new(stdin)),
            stdout: BufReader::new(stdout),
        };

        write_line(&mut io, &format!("RAAR/1 {dim}"))?;
        let reply = read_line(&mut io)?;
        if reply != "READY" {
            let _ = io.child.kill();
            return Err(PredictorError::Protocol(format!(
                "expected READY after handshake, got {reply:?}"
            )));
        }

        Ok(Self {
            command: command.to_string(),
            dim,
            io: Mutex::new(io),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64, PredictorError> {
        let line = x
            .iter()
            .map(|v| format!("{v:.16e}"))
            .collect::<Vec<_>>()
            .join(",");
        let mut io = self.io.lock().expect("predictor lock poisoned");
        write_line(&mut io, &line)?;
        let reply = read_line(&mut io)?;
        let value: f64 = reply
            .trim()
            .parse()
            .map_err(|_| PredictorError::Protocol(format!("unparseable prediction {reply:?}")))?;
        if !value.is_finite() {
            return Err(PredictorError::Protocol(format!(
                "non-finite prediction {reply:?}"
            )));
        }
        Ok(value)
    }

    /// Close the write stream and wait for the predictor to exit cleanly.
    pub fn shutdown(self) -> Result<(), PredictorError> {
        let mut io = self.io.into_inner().expect("predictor lock poisoned");
        drop(io.stdin.take());
        let status = io
            .child
            .wait()
            .map_err(|e| PredictorError::Protocol(format!("wait failed: {e}")))?;
        if !status.success() {
            return Err(PredictorError::Protocol(format!(
                "predictor exited with {status}"
            )));
        }
        Ok(())
    }
}

impl Drop for ExternalIo {
    fn drop(&mut self) {
        drop(self.stdin.take());
        let _ = self.child.wait();
    }
}

fn write_line(io: &mut ExternalIo, line: &str) -> Result<(), PredictorError> {
    let stdin = io
        .stdin
        .as_mut()
        .ok_or_else(|| PredictorError::Protocol("write stream already closed".into()))?;
    stdin
        .write_all(line.as_bytes())
        .and_then(|()| stdin.write_all(b"\n"))
        .and_then(|()| stdin.flush())
        .map_err(|e| PredictorError::Protocol(format!("write failed ({e}) for line {line:?}")))
}

fn read_line(io: &mut ExternalIo) -> Result<String, PredictorError> {
    let mut line = String::new();
    let n = io
        .stdout
        .read_line(&mut line)
        .map_err(|e| PredictorError::Protocol(format!("read failed: {e}")))?;
    if n == 0 {
        return Err(PredictorError::Protocol(
            "predictor closed its output stream".into(),
        ));
    }
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

#[cfg(all(test, unix))]
mod tests {
    use super::*;

    fn spawn_sh(
        dir: &tempfile::TempDir,
        script: &str,
        dim: usize,
    ) -> Result<ExternalPredictor, PredictorError> {
        // split_whitespace would mangle an inline script, so route via a file.
        let path = dir.path().join("pred.sh");
        std::fs::write(&path, format!("#!/bin/sh\n{script}\n")).unwrap();
        ExternalPredictor::spawn(&format!("sh {}", path.display()), dim)
    }

    #[test]
    fn first_feature_echo_round_trips() {
        let script = r#"
read handshake
echo READY
while read line; do
  echo "$line" | cut -d, -f1
done"#;
        let dir = tempfile::tempdir().unwrap();
        let pred = spawn_sh(&dir, script, 2).unwrap();
        for v in [0.0, 1.5, -2.25, 1e-8, 12345.6789] {
            assert_eq!(pred.predict(&[v, 9.9]).unwrap(), v);
        }
        pred.shutdown().unwrap();
    }

    #[test]
    fn bad_handshake_reply_is_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = spawn_sh(&dir, "read handshake\necho NOPE", 1).unwrap_err();
        match err {
            PredictorError::Protocol(msg) => assert!(msg.contains("NOPE"), "{msg}"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn garbled_prediction_is_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let script = "read handshake\necho READY\nread line\necho not-a-number";
        let pred = spawn_sh(&dir, script, 1).unwrap();
        match pred.predict(&[1.0]).unwrap_err() {
            PredictorError::Protocol(msg) => assert!(msg.contains("not-a-number"), "{msg}"),
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn early_exit_is_protocol_error() {
        let dir = tempfile::tempdir().unwrap();
        let pred = spawn_sh(&dir, "read handshake\necho READY", 1).unwrap();
        assert!(matches!(
            pred.predict(&[1.0]).unwrap_err(),
            PredictorError::Protocol(_)
        ));
    }
}
