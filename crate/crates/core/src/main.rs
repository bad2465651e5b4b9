fn main() {
    std::process::exit(levcycle::cli::run_command(std::env::args_os()));
}
