fn main() {
    std::process::exit(skt_cli::run(std::env::args_os()));
}
