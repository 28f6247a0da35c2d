fn main() {
    std::process::exit(langpaint::cli::run(std::env::args_os().collect()));
}
