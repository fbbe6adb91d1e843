fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(rfpx_cli::dispatch(&args));
}
