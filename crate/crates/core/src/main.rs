fn main() {
    std::process::exit(nic::cli::run(std::env::args_os()));
}
