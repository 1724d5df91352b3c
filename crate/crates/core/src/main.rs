fn main() {
    std::process::exit(rlvrseg::cli::main_with_args(std::env::args_os()));
}
