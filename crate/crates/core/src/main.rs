use std::io::Write;
use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .format_target(false)
        .init();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let code = match clgn::cli::run_from(std::env::args_os(), &mut out) {
        Err(e) => {
            let _ = e.print();
            e.exit_code()
        }
        Ok(Ok(())) => 0,
        Ok(Err(e)) => {
            let _ = out.flush();
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    let _ = out.flush();
    ExitCode::from(code as u8)
}
