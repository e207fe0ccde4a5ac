fn main() {
    std::process::exit(dmc::cli::run(std::env::args_os()));
}
