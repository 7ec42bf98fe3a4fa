fn main() {
    std::process::exit(numstr::cli::run(std::env::args_os()));
}
