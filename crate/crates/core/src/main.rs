use clap::Parser;

use csrr::cli::{init_logging, run, Cli};

fn main() {
    init_logging();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {}: {}", e.code(), e.to_string().replace('\n', " "));
        std::process::exit(1);
    }
}
