fn main() {
    std::process::exit(i32::from(asmote_cli::run(std::env::args_os())));
}
