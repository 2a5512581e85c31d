fn main() {
    std::process::exit(posematch::cli::run(std::env::args_os()));
}
