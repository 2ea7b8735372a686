fn main() {
    std::process::exit(samdsk::cli::main_with(std::env::args_os()));
}
