use std::process::exit;

fn main() {
    exit(manifoldmind::cli::run(std::env::args_os()));
}
