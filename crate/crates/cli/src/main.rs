use std::process::ExitCode;

use clap::Parser;
use ladx_cli::args::Cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp_secs().init();
    if let Ok(n) = std::env::var("LADX_THREADS") {
        match n.parse::<usize>() {
            // Read once by the GEMM kernels on first use, so this must happen first.
            Ok(n) if n > 0 => std::env::set_var("MATMUL_NUM_THREADS", n.to_string()),
            _ => {
                eprintln!("{}", ladx_cli::CliError::Usage(format!("LADX_THREADS must be a positive integer, got {n:?}")).to_json());
                return ExitCode::from(2);
            }
        }
    }
    // Let clap handle --help, --version and usage errors itself.
    let argv: Vec<String> = std::env::args().skip(1).collect();
    if let Err(e) = Cli::try_parse() {
        if !e.use_stderr() {
            e.exit();
        }
        eprintln!("{}", ladx_cli::CliError::Usage(e.to_string()).to_json());
        return ExitCode::from(2);
    }
    match ladx_cli::run_args(argv) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
