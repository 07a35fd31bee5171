fn main() {
    std::process::exit(c2tid::cli::main());
}
