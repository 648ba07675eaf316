fn main() {
    std::process::exit(fer_core::cli::main());
}
