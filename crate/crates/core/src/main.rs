fn main() {
    std::process::exit(teamc::cli::cli_run(std::env::args_os()));
}
