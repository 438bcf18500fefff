fn main() -> std::process::ExitCode {
    dtcbf::cli::main()
}
