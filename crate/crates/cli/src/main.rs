fn main() {
    std::process::exit(spectral_q::main_with(std::env::args_os()));
}
