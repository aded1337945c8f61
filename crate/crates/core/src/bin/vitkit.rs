fn main() {
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Info)
        .format_timestamp(None)
        .init();
    std::process::exit(vitkit::cli::run(std::env::args_os()));
}
