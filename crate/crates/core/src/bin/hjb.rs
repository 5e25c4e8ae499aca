fn main() {
    std::process::exit(hjb_core::cli::run(std::env::args()));
}
