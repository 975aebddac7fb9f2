fn main() {
    std::process::exit(nhnet::cli::run(std::env::args_os()));
}
