fn main() {
    std::process::exit(tinytrain::cli::main());
}
