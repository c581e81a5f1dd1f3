fn main() {
    std::process::exit(hybrid_vr::cli::run(std::env::args_os()));
}
