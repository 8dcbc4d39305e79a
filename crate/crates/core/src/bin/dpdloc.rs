use clap::Parser;
use dpdloc::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
