fn main() {
    std::process::exit(lesion_triage::run(std::env::args_os()));
}
