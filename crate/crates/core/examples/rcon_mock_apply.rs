//! Dispatch a plan over RCON to the in-process mock server.
use std::sync::atomic::AtomicBool;

use occucraft::grid::{Aabb, VoxelCoord};
use occucraft::plan::{BuildCommand, BuildPlan};
use occucraft::rcon::mock::{MockScript, MockServer};
use occucraft::rcon::{apply_plan, DispatchOptions, RconEndpoint, Session};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let bounds = Aabb::spanning(VoxelCoord::new(0, 64, 0), VoxelCoord::new(4, 66, 4));
    let plan = BuildPlan {
        bounds,
        commands: vec![
            BuildCommand::Clear { region: bounds },
            BuildCommand::Fill { region: Aabb::spanning(VoxelCoord::new(0, 64, 0), VoxelCoord::new(4, 64, 4)), block: "minecraft:oak_planks".into() },
            BuildCommand::SetBlock { pos: VoxelCoord::new(2, 65, 2), block: "minecraft:oak_stairs[facing=north]".into() },
            BuildCommand::SetBlock { pos: VoxelCoord::new(9, 65, 2), block: "minecraft:nonsense".into() },
        ],
        block_table: Default::default(),
    };
    let script = MockScript { fail_commands: vec!["setblock 9 65 2 minecraft:nonsense".into()], ..MockScript::default() };
    let server = MockServer::start("hunter2", script)?;
    let endpoint = RconEndpoint { port: server.port(), password: "hunter2".into(), ..RconEndpoint::default() };
    let mut session = Session::connect_and_auth(&endpoint)?;
    let report = apply_plan(&mut session, &plan, &DispatchOptions::default(), &AtomicBool::new(false))?;
    for line in server.transcript() {
        println!("server got: {line}");
    }
    println!("sent {}, failed {:?}", report.sent(), report.failed());
    Ok(())
}
