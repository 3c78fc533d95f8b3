fn main() {
    std::process::exit(argrel_cli::run(std::env::args_os()));
}
