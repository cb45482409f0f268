fn main() {
    std::process::exit(sgreplay::cli::main());
}
