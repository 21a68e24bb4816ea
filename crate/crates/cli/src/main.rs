fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = emoroute_cli::run_from_args(std::env::args_os()) {
        eprintln!("emoroute: {e}");
        std::process::exit(e.exit_code());
    }
}
