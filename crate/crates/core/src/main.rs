fn main() {
    std::process::exit(quadcv::cli::cli_main(std::env::args_os()));
}
