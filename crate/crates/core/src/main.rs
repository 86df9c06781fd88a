use clap::Parser;
use slopewatch::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
