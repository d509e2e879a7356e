fn main() {
    std::process::exit(absde::cli::main_entry());
}
