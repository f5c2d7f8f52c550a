//! The `cownter` command line: dataset generation and tiling, training,
//! evaluation, prediction and the annotation service.

pub mod args;
pub mod commands;
pub mod error;
pub mod service;

use std::io::Write;
use std::net::SocketAddr;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => commands::synth(&a, out),
        Command::Tile(a) => commands::tile(&a, out),
        Command::Train(a) => commands::train(&a, out),
        Command::Eval(a) => commands::eval(&a, out),
        Command::Predict(a) => commands::predict(&a, out),
        Command::Annotate(a) => {
            let dir = commands::ensure_dir(&a.data)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(service::serve(
                &dir,
                SocketAddr::new(a.host, a.port),
                a.ui.as_deref(),
                |addr| {
                    let _ = writeln!(out, "{}", serde_json::json!({ "listening": addr.to_string() }));
                    let _ = out.flush();
                },
            ))
        }
    }
}
