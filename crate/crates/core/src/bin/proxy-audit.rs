fn main() {
    std::process::exit(proxy_audit::cli::run(std::env::args_os()));
}
