use clap::Parser;
use odi_cli::cli::{exit_status, run, Cli};

fn main() {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = run(&cli);
    match &result {
        Ok(outcome) => println!("{}", outcome.message),
        Err(e) => eprintln!("odi: {e}"),
    }
    std::process::exit(exit_status(&result).code());
}
