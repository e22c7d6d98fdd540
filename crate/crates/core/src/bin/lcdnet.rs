fn main() {
    std::process::exit(lcdnet::cli::run(std::env::args_os()));
}
