fn main() {
    std::process::exit(tripletqa_cli::run(std::env::args_os()));
}
