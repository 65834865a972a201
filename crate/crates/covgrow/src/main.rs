use std::process::ExitCode;

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match covgrow::cli::run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = covgrow::cli::report(&e, std::io::stderr());
            ExitCode::from(code as u8)
        }
    }
}
