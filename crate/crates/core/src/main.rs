fn main() {
    let level =
        std::env::var("CAREX_LOG").ok().and_then(|l| l.parse::<tracing::Level>().ok()).unwrap_or(tracing::Level::WARN);
    tracing_subscriber::fmt().with_max_level(level).with_writer(std::io::stderr).init();
    let code = carex::cli::run(std::env::args_os(), &mut std::io::stdout());
    std::process::exit(code);
}
