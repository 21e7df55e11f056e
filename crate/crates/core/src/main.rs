fn main() {
    std::process::exit(scs2ut::cli::main_with_args(std::env::args_os()));
}
