use clap::Parser;

use tyrt::cli::Cli;
use tyrt::commands::dispatch;

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.kind.exit_code());
    }
}
