fn main() {
    std::process::exit(ooc_stencil::cli::main_with(std::env::args_os()));
}
