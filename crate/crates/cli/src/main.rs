use std::io::Write;

fn main() {
    let mut stdout = std::io::stdout();
    let code = qvol_cli::main_with(std::env::args_os(), &mut stdout, &mut std::io::stderr());
    let _ = stdout.flush();
    std::process::exit(code);
}
