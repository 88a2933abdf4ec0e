fn main() {
    std::process::exit(osgs_goal::cli::main_with_args(std::env::args_os()));
}
