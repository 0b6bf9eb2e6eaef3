fn main() {
    std::process::exit(prefixguard::cli::run(std::env::args_os()));
}
