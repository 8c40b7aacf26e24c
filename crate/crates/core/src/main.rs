fn main() {
    std::process::exit(freenoise::cli::main_with_args(std::env::args_os()));
}
