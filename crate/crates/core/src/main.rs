fn main() -> std::process::ExitCode {
    urelu_sysid::cli::main()
}
