//! Reference predictor for the external line protocol.
//!
//! Speaks the protocol end to end: reads `RAAR/1 <d>`, replies `READY`,
//! then answers each query line of d comma-separated floats with the mean
//! of the features, formatted to 17 significant digits. Use it to test
//! engine integrations or as a template for bridging a real model.
//!
//! Options:
//!   --log <path>   append every reply line to a file
//!   --mode <mode>  mean (default) | first | garbled | no-ready | close-early
//!
//! The non-default modes deliberately violate the protocol for tests.

use std::io::{BufRead, BufWriter, Write};
use std::process::ExitCode;

fn main() -> ExitCode {
    let mut mode = String::from("mean");
    let mut log_path: Option<String> = None;
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        match arg.as_str() {
            "--mode" => mode = args.next().unwrap_or_default(),
            "--log" => log_path = args.next(),
            other => {
                eprintln!("unknown argument `{other}`");
                return ExitCode::from(2);
            }
        }
    }

    let stdin = std::io::stdin().lock();
    let mut lines = stdin.lines();
    let stdout = std::io::stdout().lock();
    let mut out = BufWriter::new(stdout);

    let Some(Ok(handshake)) = lines.next() else {
        eprintln!("no handshake received");
        return ExitCode::FAILURE;
    };
    let dim: usize = handshake
        .strip_prefix("RAAR/1 ")
        .and_then(|d| d.trim().parse().ok())
        .unwrap_or(0);
    if dim == 0 {
        eprintln!("bad handshake: {handshake:?}");
        return ExitCode::FAILURE;
    }

    if mode == "no-ready" {
        let _ = writeln!(out, "NOT-TODAY");
        let _ = out.flush();
        return ExitCode::SUCCESS;
    }
    if writeln!(out, "READY").and_then(|()| out.flush()).is_err() {
        return ExitCode::FAILURE;
    }
    if mode == "close-early" {
        return ExitCode::SUCCESS;
    }

    let mut log = log_path.map(|path| {
        BufWriter::new(std::fs::File::create(path).expect("log path must be writable"))
    });

    for line in lines {
        let Ok(line) = line else {
            return ExitCode::FAILURE;
        };
        let values: Result<Vec<f64>, _> =
            line.split(',').map(|t| t.trim().parse::<f64>()).collect();
        let Ok(values) = values else {
            eprintln!("unparseable query: {line:?}");
            return ExitCode::FAILURE;
        };
        if values.len() != dim {
            eprintln!("expected {dim} features, got {}", values.len());
            return ExitCode::FAILURE;
        }

        let reply = match mode.as_str() {
            "garbled" => "not-a-number".to_string(),
            "first" => format!("{:.16e}", values[0]),
            _ => {
                let mean = values.iter().sum::<f64>() / values.len() as f64;
                format!("{mean:.16e}")
            }
        };
        if writeln!(out, "{reply}").and_then(|()| out.flush()).is_err() {
            return ExitCode::FAILURE;
        }
        if let Some(log) = &mut log {
            let _ = writeln!(log, "{reply}");
        }
    }
    if let Some(mut log) = log {
        let _ = log.flush();
    }
    ExitCode::SUCCESS
}
