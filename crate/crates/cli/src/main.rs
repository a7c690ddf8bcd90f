use clap::Parser;

fn main() {
    let cli = sigdim_cli::Cli::parse();
    std::process::exit(sigdim_cli::main_with_exit(cli));
}
