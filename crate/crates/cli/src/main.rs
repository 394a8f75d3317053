use std::io::Write;

use clap::Parser;
use pgu_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => {
            // The written reports keep the config echo; stdout stays short.
            let mut summary = outcome.summary;
            if let Some(obj) = summary.as_object_mut() {
                obj.remove("config_echo");
                obj.remove("entropy_forget");
            }
            let text = serde_json::to_string_pretty(&summary).unwrap_or_default();
            let _ = writeln!(std::io::stdout(), "{text}");
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
