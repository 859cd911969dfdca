use clap::Parser;

fn main() {
    let cli = phaseforge_cli::Cli::parse();
    if let Err(e) = phaseforge_cli::run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.code);
    }
}
