use std::process::ExitCode;

use augforest::cli;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AUGFOREST_LOG", "warn")).init();
    match cli::run(std::env::args_os()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let err = anyhow::Error::new(e).context(if code == 2 { "configuration error" } else { "run failed" });
            eprintln!("error: {err:#}");
            ExitCode::from(code as u8)
        }
    }
}
