fn main() {
    let code = edgeswarm::cli::cli_main(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
