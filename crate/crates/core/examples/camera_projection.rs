//! Project a few world points through a yaw/pitch camera.
use occucraft::camera::{project, Extrinsics, Intrinsics, Pose};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = Intrinsics::from_fov(70f64.to_radians(), 640, 480)?;
    let pose = Pose::from_degrees([0.5, 64.0, 0.5], 30.0, -10.0)?;
    let ext = Extrinsics::from_pose(&pose);
    println!("fx {:.2} fy {:.2} cx {} cy {}", k.fx, k.fy, k.cx, k.cy);
    println!("rotation {}", ext.rotation);
    for p in [[0.5, 64.0, 10.5], [-3.0, 62.0, 8.0], [0.5, 64.0, -5.0]] {
        match project(p, &ext, &k) {
            Ok(q) => println!("{p:?} -> u {:.1} v {:.1} depth {:.2} in image: {}", q.u, q.v, q.depth, k.contains(q.u, q.v)),
            Err(e) => println!("{p:?} -> {e}"),
        }
    }
    Ok(())
}
