fn main() {
    std::process::exit(mdlab_cli::run(std::env::args_os()));
}
