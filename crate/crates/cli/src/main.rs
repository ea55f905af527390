fn main() {
    let code = occ4d_cli::commands::main(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
