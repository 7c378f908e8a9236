use clap::Parser;
use manigrad::cli;

fn main() {
    let args = cli::Args::parse();
    std::process::exit(cli::run(args));
}
