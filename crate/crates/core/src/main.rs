use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match biastrace::cli::run(std::env::args_os()) {
        Err(usage) => usage.exit(),
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(failure)) => {
            eprintln!("biastrace: failed stages:\n{failure}");
            ExitCode::FAILURE
        }
    }
}
