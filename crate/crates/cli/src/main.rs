use clap::Parser;

use pairdiff_cli::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("pairdiff: {e}");
        std::process::exit(e.exit_code());
    }
}
