use std::io::{stderr, stdout};

fn main() {
    let code = clouddoe_cli::cli_dispatch(std::env::args_os(), &mut stdout(), &mut stderr());
    std::process::exit(code);
}
