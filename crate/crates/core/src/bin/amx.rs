fn main() {
    std::process::exit(actmatch::cli::run(std::env::args_os()));
}
