fn main() {
    std::process::exit(rtnmpc_cli::run_from(std::env::args_os()));
}
