fn main() {
    std::process::exit(focalstage::cli::run());
}
