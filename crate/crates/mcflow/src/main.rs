fn main() {
    eprintln!("mcflow CLI: under construction");
    std::process::exit(1);
}
