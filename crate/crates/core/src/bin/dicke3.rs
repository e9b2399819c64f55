fn main() {
    std::process::exit(dicke3::cli::main_with_args(std::env::args_os()));
}
