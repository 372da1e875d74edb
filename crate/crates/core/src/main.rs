fn main() {
    std::process::exit(ttacal::cli::run(std::env::args_os()));
}
