fn main() {
    std::process::exit(trt1d::cli::run_cli(std::env::args_os()));
}
