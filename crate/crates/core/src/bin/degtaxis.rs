use clap::Parser;
use degtaxis::cli::{main_with, Cli};

fn main() {
    let cli = Cli::parse();
    let env_out = std::env::var_os("DGT_OUT").map(Into::into);
    std::process::exit(main_with(cli, env_out));
}
