fn main() {
    std::process::exit(dpointnet::cli::run());
}
