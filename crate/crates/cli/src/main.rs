fn main() {
    let outcome = olsid_cli::run(std::env::args_os());
    if let Some(msg) = &outcome.message {
        if outcome.code == 0 {
            print!("{msg}");
        } else {
            eprintln!("{msg}");
        }
    }
    if let Some(m) = &outcome.manifest {
        println!("{}", serde_json::to_string_pretty(m).expect("manifest serializes"));
    }
    std::process::exit(outcome.code);
}
