fn main() {
    std::process::exit(lincert_cli::run());
}
