fn main() {
    std::process::exit(earlycast::cli::run());
}
