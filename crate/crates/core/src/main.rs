fn main() {
    std::process::exit(mrd_adjust::cli::run(std::env::args_os()));
}
