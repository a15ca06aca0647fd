fn main() {
    qrwkv::alloc::keep_large_buffers();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    std::process::exit(qrwkv_cli::main_with_args(std::env::args_os()));
}
