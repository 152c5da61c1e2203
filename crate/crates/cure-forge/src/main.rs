fn main() {
    std::process::exit(cure_forge::cli_main());
}
