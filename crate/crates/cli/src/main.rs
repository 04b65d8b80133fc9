use clap::Parser;

fn main() {
    if let Err(e) = patrol_cli::run(patrol_cli::Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
