use std::process::ExitCode;

use tracing_subscriber::EnvFilter;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_env("MEDMSA_LOG").unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut io = medmsa_cli::cli::Io {
        out: &mut stdout.lock(),
        err: &mut stderr.lock(),
    };
    ExitCode::from(medmsa_cli::cli::main_with(std::env::args_os().collect(), &mut io))
}
