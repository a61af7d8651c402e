fn main() {
    std::process::exit(groupbal::cli::run(std::env::args_os()));
}
