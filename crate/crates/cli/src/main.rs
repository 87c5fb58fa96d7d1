fn main() {
    std::process::exit(bandflow_cli::run(std::env::args_os()));
}
