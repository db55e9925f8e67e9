use clap::Parser;
use eceth_cli::{run, Cli, SEED_ENV};

fn main() {
    let cli = Cli::parse();
    let seed_env = std::env::var(SEED_ENV).ok();
    if let Err(e) = run(&cli, seed_env.as_deref()) {
        eprintln!("eceth: {e}");
        std::process::exit(e.exit_code());
    }
}
