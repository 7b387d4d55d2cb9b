fn main() {
    let code = socp_sqp::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
