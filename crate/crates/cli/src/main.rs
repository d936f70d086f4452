use clap::Parser;

fn main() {
    let cli = stratex_cli::Cli::parse();
    match stratex_cli::run(cli) {
        Ok(status) => {
            println!("{}", serde_json::to_string(&status).expect("status serializes"));
        }
        Err(err) => {
            let line = serde_json::json!({
                "status": "error",
                "message": format!("{err:#}"),
            });
            println!("{line}");
            std::process::exit(1);
        }
    }
}
