fn main() {
    std::process::exit(grasp_nas::cli::dispatch(std::env::args_os()));
}
