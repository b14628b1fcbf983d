fn main() {
    std::process::exit(aisle::cli::parse_and_dispatch(std::env::args_os()));
}
