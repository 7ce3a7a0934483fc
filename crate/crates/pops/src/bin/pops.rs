fn main() {
    std::process::exit(pops::cli::run());
}
