//! Serve a one-project root and query it over HTTP.
use std::io::{Read, Write};

use occucraft::grid::io::save_grid;
use occucraft::grid::{ClassTable, SemanticGrid, VoxelCoord};
use occucraft::pipeline::PipelineConfig;
use occucraft::service::{router, ServiceConfig, ServiceState};

fn get(port: u16, path: &str) -> std::io::Result<String> {
    let mut s = std::net::TcpStream::connect(("127.0.0.1", port))?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n")?;
    let mut out = String::new();
    s.read_to_string(&mut out)?;
    Ok(out)
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join(format!("occucraft-service-{}", std::process::id()));
    let project = root.join("room");
    std::fs::create_dir_all(&project)?;
    let table = std::sync::Arc::new(ClassTable::canonical());
    let mut g = SemanticGrid::new(VoxelCoord::ZERO, [8, 4, 8], table.clone())?;
    for x in 0..8 {
        for z in 0..8 {
            g.set(VoxelCoord::new(x, 0, z), table.id_of("floor").unwrap());
        }
    }
    g.set(VoxelCoord::new(3, 1, 3), table.id_of("chair").unwrap());
    save_grid(&g, project.join("fused.vxg"))?;

    let state = ServiceState::new(ServiceConfig::new(&root, PipelineConfig::default()));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
    let port = listener.local_addr()?.port();
    tokio::spawn(async move { axum::serve(listener, router(state)).await });

    for path in ["/projects", "/projects/room/centers"] {
        let body = tokio::task::spawn_blocking(move || get(port, path)).await??;
        println!("GET {path}\n{}\n", body.split("\r\n\r\n").nth(1).unwrap_or(""));
    }
    std::fs::remove_dir_all(&root)?;
    Ok(())
}
