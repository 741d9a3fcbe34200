fn main() {
    std::process::exit(stdi_core::cli::main());
}
