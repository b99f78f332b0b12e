use clap::Parser;

fn main() {
    std::process::exit(dtfine::cli::main_with(dtfine::cli::Cli::parse()));
}
