fn main() {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .init();
    std::process::exit(iert::cli::main_with_args(std::env::args_os()));
}
