fn main() {
    std::process::exit(mbclassify::cli::run(std::env::args_os()));
}
