fn main() {
    std::process::exit(vpmerge::cli::execute(std::env::args_os()));
}
