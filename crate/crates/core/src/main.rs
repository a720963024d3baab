fn main() {
    std::process::exit(surrotune::cli::main());
}
