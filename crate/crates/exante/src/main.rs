use clap::Parser;

use exante::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(m) => println!(
            "exante {}: wrote {} artifacts (config {})",
            cli.command.name(),
            m.files.len(),
            &m.config_hash[..12]
        ),
        Err(e) => {
            eprintln!("exante: {e}");
            std::process::exit(1);
        }
    }
}
