fn main() {
    std::process::exit(caption_wsod::cli::main_with_args(std::env::args_os()));
}
