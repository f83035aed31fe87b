use clap::Parser;
use vnl_lab::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VNL_LOG", "info")).init();
    let args = Cli::parse();
    if let Err(e) = cli::run(args) {
        log::error!("{}", e);
        eprintln!("error: {}", e);
        std::process::exit(e.exit_code());
    }
}
