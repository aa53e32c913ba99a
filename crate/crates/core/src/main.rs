fn main() {
    std::process::exit(ibshape::cli::run(std::env::args_os()));
}
