fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(ensemble::cli::main_with(args));
}
