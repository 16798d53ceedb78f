fn main() {
    std::process::exit(simfuse::io::cli_main(std::env::args_os()));
}
