fn main() {
    std::process::exit(forge::commands::main_with_args(std::env::args_os()));
}
