fn main() {
    std::process::exit(fence_core::cli::run(std::env::args_os()));
}
