fn main() {
    std::process::exit(zo_bilevel_cli::run(std::env::args_os()));
}
