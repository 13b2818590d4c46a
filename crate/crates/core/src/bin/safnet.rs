fn main() {
    std::process::exit(safnet::cli::main());
}
