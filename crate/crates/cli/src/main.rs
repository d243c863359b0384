use clap::Parser;
use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("FLEXGRID_LOG", "warn"))
        .format_timestamp(None)
        .init();
    let cli = flexgrid_cli::Cli::parse();
    std::process::exit(flexgrid_cli::run(cli));
}
