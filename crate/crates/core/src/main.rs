fn main() {
    std::process::exit(revpref::cli::run(std::env::args_os()));
}
