use clap::Parser;

fn main() {
    let cli = qdlag_cli::Cli::parse();
    std::process::exit(qdlag_cli::main_with(cli));
}
