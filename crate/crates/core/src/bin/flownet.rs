fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FLOWNET_LOG", "warn")).init();
    std::process::exit(flownet::cli::run_cli(std::env::args_os()));
}
