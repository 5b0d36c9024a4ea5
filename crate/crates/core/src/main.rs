fn main() {
    std::process::exit(layerwise::cli::main_with(std::env::args_os()));
}
