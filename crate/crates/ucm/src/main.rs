use clap::Parser;

fn main() {
    let cli = ucm::cli::Cli::parse();
    let stdout = std::io::stdout();
    if let Err(e) = ucm::cli::run(cli, &mut stdout.lock()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
