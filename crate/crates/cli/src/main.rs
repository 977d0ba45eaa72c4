fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(crossings_cli::run(&argv));
}
