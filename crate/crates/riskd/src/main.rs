fn main() {
    std::process::exit(riskd::cli::main_with_args(std::env::args_os()));
}
