use clap::Parser;

fn main() {
    let cli = idmne::cli::Cli::parse();
    std::process::exit(idmne::cli::run(cli));
}
