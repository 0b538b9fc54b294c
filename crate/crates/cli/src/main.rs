fn main() {
    std::process::exit(ltood_cli::run(std::env::args_os()));
}
