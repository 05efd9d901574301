fn main() {
    std::process::exit(cookiewalk::cli::main_with_args(std::env::args_os()));
}
