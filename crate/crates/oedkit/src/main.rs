fn main() {
    std::process::exit(oedkit::driver::run(std::env::args_os()));
}
