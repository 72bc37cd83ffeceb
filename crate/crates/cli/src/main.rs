fn main() {
    std::process::exit(ssp_cli::run(std::env::args_os()));
}
