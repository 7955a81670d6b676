use clap::Parser;
use skullstrip_cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
