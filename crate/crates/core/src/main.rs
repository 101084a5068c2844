fn main() {
    std::process::exit(polwalk::cli::run(std::env::args_os()));
}
