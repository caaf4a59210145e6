use std::process::ExitCode;

use isinglab_cli::cli::{env_seed, main_with};

fn main() -> ExitCode {
    let seed = env_seed();
    let code = main_with(std::env::args_os(), seed.as_deref(), &mut std::io::stdout(), &mut std::io::stderr());
    ExitCode::from(code as u8)
}
