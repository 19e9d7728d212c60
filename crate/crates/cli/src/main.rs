use clap::Parser;
use dusty_cli::args::Cli;
use dusty_cli::exit;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Err(e) = dusty_cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(exit::exit_code(&e));
    }
}
