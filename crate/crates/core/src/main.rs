fn main() {
    std::process::exit(mets::cli::run(std::env::args_os()));
}
