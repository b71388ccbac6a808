use clap::Parser;
use qbuf::app::{execute, Cli};

fn main() {
    let cli = Cli::parse();
    let outcome = execute(&cli);
    for line in &outcome.stdout {
        println!("{line}");
    }
    for line in &outcome.stderr {
        eprintln!("{line}");
    }
    std::process::exit(outcome.code);
}
