use std::net::SocketAddr;
use std::path::PathBuf;

use thermoscan_service::{router, AppState};

const USAGE: &str = "usage: thermoscan-service [--addr HOST:PORT] [--data-dir DIR]";

fn parse_args() -> Result<(SocketAddr, PathBuf), String> {
    let mut addr: SocketAddr = "127.0.0.1:8080".parse().expect("valid default");
    let mut dir = PathBuf::from("sessions");
    let mut args = std::env::args().skip(1);
    while let Some(a) = args.next() {
        match a.as_str() {
            "--addr" => {
                let v = args.next().ok_or(USAGE)?;
                addr = v.parse().map_err(|e| format!("--addr {v}: {e}"))?;
            }
            "--data-dir" => dir = args.next().ok_or(USAGE)?.into(),
            "-h" | "--help" => {
                println!("{USAGE}");
                std::process::exit(0);
            }
            other => return Err(format!("unexpected argument {other:?}\n{USAGE}")),
        }
    }
    Ok((addr, dir))
}

#[tokio::main]
async fn main() {
    let (addr, dir) = match parse_args() {
        Ok(v) => v,
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(2);
        }
    };
    let state = match AppState::new(&dir) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("cannot use data dir {}: {e}", dir.display());
            std::process::exit(3);
        }
    };
    let listener = match tokio::net::TcpListener::bind(addr).await {
        Ok(l) => l,
        Err(e) => {
            eprintln!("cannot bind {addr}: {e}");
            std::process::exit(3);
        }
    };
    eprintln!("listening on {addr}, sessions in {}", dir.display());
    if let Err(e) = axum::serve(listener, router(state)).await {
        eprintln!("server error: {e}");
        std::process::exit(1);
    }
}
