fn main() {
    std::process::exit(mcm_core::cli::run(std::env::args_os()));
}
