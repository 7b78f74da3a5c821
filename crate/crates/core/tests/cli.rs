use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use occucraft::grid::io::load_grid;
use occucraft::plan::{render_text, BuildPlan, Dialect};
use occucraft::rcon::mock::{MockScript, MockServer};
use occucraft::world::WorldMap;

fn sample() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data/sample")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_occucraft"));
    c.env_remove("OCCUCRAFT_CONFIG").env("RUST_LOG", "error");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(out.status.success(), "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn last_json_line(stderr: &[u8]) -> serde_json::Value {
    let text = String::from_utf8_lossy(stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

/// Extracts the sample views and returns (config, views dir, poses).
fn views(tmp: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let cfg = sample().join("occucraft.toml");
    let poses = sample().join("poses.json");
    let dir = tmp.join("views");
    ok(&["--config", p(&cfg), "extract", "--world", p(&sample().join("world.json")), "--poses", p(&poses), "--out", p(&dir)]);
    (cfg, dir, poses)
}

#[test]
fn usage_errors_exit_two() {
    for args in [&["frobnicate"][..], &["centers"], &["centers", "--in", "x", "--k", "three"], &["extract", "--dims", "1", "2"]] {
        let out = run(args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert_eq!(last_json_line(&out.stderr)["error"], "usage");
    }
    assert!(run(&["--help"]).status.success());
}

#[test]
fn runtime_errors_exit_one() {
    let out = run(&["centers", "--in", "/definitely/missing.vxg"]);
    assert_eq!(out.status.code(), Some(1));
    let e = last_json_line(&out.stderr);
    assert_eq!((e["error"].as_str(), e["command"].as_str()), (Some("runtime"), Some("centers")));
    assert!(e["message"].as_str().unwrap().contains("missing.vxg"));

    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    std::fs::write(&bad, "[centers]\nk = 2\n").unwrap();
    let out = run(&["--config", p(&bad), "centers", "--in", "x.vxg"]);
    assert_eq!(out.status.code(), Some(1));
    let out = bin().env("OCCUCRAFT_CONFIG", &bad).args(["centers", "--in", "x.vxg"]).output().unwrap();
    assert!(last_json_line(&out.stderr)["message"].as_str().unwrap().contains("odd"));
}

#[test]
fn extract_writes_one_grid_per_pose() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("out");
    let poses = sample().join("poses.json");
    ok(&[
        "extract", "--world", p(&sample().join("world.json")), "--poses", p(&poses), "--dims", "8", "6", "10",
        "--classmap", p(&sample().join("classmap.json")), "--format", "json", "--out", p(&dir),
    ]);
    let mut names: Vec<String> = std::fs::read_dir(&dir).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    names.sort();
    assert_eq!(names, ["0001.json", "0002.json", "0003.json", "0004.json"]);
    // w across the view, d along it; the third pose looks along -x
    let expect = [[8, 6, 10], [8, 6, 10], [10, 6, 8], [8, 6, 10]];
    for (n, dims) in names.iter().zip(expect) {
        assert_eq!(load_grid(dir.join(n)).unwrap().dims(), dims, "{n}");
    }
}

#[test]
fn centers_subcommand_writes_valid_json() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, dir, poses) = views(tmp.path());
    let fused = tmp.path().join("fused.json");
    ok(&["--config", p(&cfg), "fuse", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out", p(&fused)]);
    let out = tmp.path().join("centers.json");
    ok(&["centers", "--in", p(&fused), "--tau", "0.2", "--eta", "2", "--out", p(&out)]);
    let rows: Vec<serde_json::Value> = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert!(!rows.is_empty());
    for r in &rows {
        assert!(r["id"].is_u64() && r["class"].is_string() && r["members"].is_u64());
        assert_eq!(r["pos"].as_array().unwrap().len(), 3);
    }
    // stdout when --out is absent
    let so = ok(&["centers", "--in", p(&fused), "--tau", "0.2", "--eta", "2"]);
    assert_eq!(String::from_utf8(so.stdout).unwrap().trim_end(), std::fs::read_to_string(&out).unwrap().trim_end());
}

#[test]
fn stages_compose_like_the_monolith() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, dir, poses) = views(tmp.path());
    let t = tmp.path();
    let c = p(&cfg);
    ok(&["--config", c, "reconstruct", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out-dir", p(&t.join("mono"))]);
    ok(&["--config", c, "fuse", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out", p(&t.join("fused.vxg"))]);
    ok(&["--config", c, "centers", "--in", p(&t.join("fused.vxg")), "--out", p(&t.join("centers.json"))]);
    ok(&["--config", c, "match", "--in", p(&t.join("fused.vxg")), "--centers", p(&t.join("centers.json")), "--out", p(&t.join("matches.json"))]);
    ok(&[
        "--config", c, "plan", "--in", p(&t.join("fused.vxg")), "--centers", p(&t.join("centers.json")),
        "--matches", p(&t.join("matches.json")), "--out", p(&t.join("plan.json")),
    ]);
    let plan_direct = ok(&["--config", c, "plan", "--in", p(&t.join("fused.vxg")), "--centers", p(&t.join("centers.json"))]).stdout;
    let mono = std::fs::read(t.join("mono/plan.json")).unwrap();
    assert_eq!(std::fs::read(t.join("plan.json")).unwrap(), mono);
    assert_eq!(plan_direct, mono);
    assert_eq!(std::fs::read(t.join("fused.vxg")).unwrap(), std::fs::read(t.join("mono/fused.vxg")).unwrap());
    assert_eq!(std::fs::read(t.join("centers.json")).unwrap(), std::fs::read(t.join("mono/centers.json")).unwrap());
    assert!(!t.join("mono").join(occucraft::cli::LOCK_FILE).exists());
}

#[test]
fn plan_piped_into_dry_run_sends_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, dir, poses) = views(tmp.path());
    let t = tmp.path();
    let c = p(&cfg);
    ok(&["--config", c, "reconstruct", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out-dir", p(&t.join("r"))]);
    let plan_json = ok(&["--config", c, "plan", "--in", p(&t.join("r/fused.vxg")), "--centers", p(&t.join("r/centers.json"))]).stdout;
    let server = MockServer::start("pw", MockScript::default()).unwrap();
    let port = server.port().to_string();
    let mut child = bin()
        .args(["apply", "--host", "127.0.0.1", "--port", &port, "--dry-run"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(&plan_json).unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let plan = BuildPlan::from_json(std::str::from_utf8(&plan_json).unwrap()).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), render_text(&plan, Dialect::Vanilla));
    assert!(server.transcript().is_empty());
}

#[test]
fn apply_sends_every_command() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, dir, poses) = views(tmp.path());
    let t = tmp.path();
    ok(&["--config", p(&cfg), "reconstruct", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out-dir", p(&t.join("r"))]);
    let server = MockServer::start("s3cret", MockScript::default()).unwrap();
    let port = server.port().to_string();
    let plan_path = t.join("r/plan.json");
    let args = ["apply", "--plan", p(&plan_path), "--port", &port, "--throttle", "2000", "--password-env", "TEST_RCON_PW"];
    let out = bin().args(args).args(["--report", p(&t.join("report.json"))]).env("TEST_RCON_PW", "s3cret").output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let plan = BuildPlan::load(t.join("r/plan.json")).unwrap();
    assert_eq!(server.transcript().join("\n") + "\n", render_text(&plan, Dialect::Vanilla));
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(t.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["total"].as_u64(), Some(server.transcript().len() as u64));

    let out = bin().args(args).env("TEST_RCON_PW", "wrong").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(last_json_line(&out.stderr)["message"].as_str().unwrap().contains("auth"));
}

#[test]
fn convert_round_trips() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let world = sample().join("world.json");
    ok(&["convert", "--in", p(&world), "--out", p(&t.join("w.schem"))]);
    ok(&["convert", "--in", p(&t.join("w.schem")), "--out", p(&t.join("w.json"))]);
    let (a, b) = (WorldMap::load(&world).unwrap(), WorldMap::load(t.join("w.json")).unwrap());
    // schematics carry no placement, so the copy starts at the origin
    let shift = a.bounds().min();
    assert_eq!(a.bounds().translate(-shift), b.bounds());
    assert!(a.bounds().iter().all(|v| a.query(v) == b.query(v - shift)));

    let (cfg, dir, poses) = views(t);
    ok(&["--config", p(&cfg), "fuse", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out", p(&t.join("f.vxg"))]);
    ok(&["convert", "--in", p(&t.join("f.vxg")), "--out", p(&t.join("f.json"))]);
    ok(&["convert", "--in", p(&t.join("f.json")), "--out", p(&t.join("g.vxg"))]);
    assert_eq!(std::fs::read(t.join("f.vxg")).unwrap(), std::fs::read(t.join("g.vxg")).unwrap());

    ok(&["--config", p(&cfg), "plan", "--in", p(&t.join("f.vxg")), "--centers", p(&sample_centers(t, &cfg)), "--out", p(&t.join("plan.json"))]);
    ok(&["convert", "--in", p(&t.join("plan.json")), "--out", p(&t.join("build.mcfunction")), "--dialect", "worldedit"]);
    let plan = BuildPlan::load(t.join("plan.json")).unwrap();
    assert_eq!(std::fs::read_to_string(t.join("build.mcfunction")).unwrap(), render_text(&plan, Dialect::Worldedit));
}

fn sample_centers(t: &Path, cfg: &Path) -> PathBuf {
    let out = t.join("c.json");
    ok(&["--config", p(cfg), "centers", "--in", p(&t.join("f.vxg")), "--out", p(&out)]);
    out
}

#[test]
fn remap_relabels_through_the_map() {
    let tmp = tempfile::tempdir().unwrap();
    let t = tmp.path();
    let (cfg, dir, poses) = views(t);
    ok(&["--config", p(&cfg), "fuse", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out", p(&t.join("f.vxg"))]);
    std::fs::write(t.join("classes.json"), r#"["empty", "structure", "stuff"]"#).unwrap();
    std::fs::write(
        t.join("map.json"),
        r#"{"default": "stuff", "map": {"ceiling": "structure", "floor": "structure", "wall": "structure", "window": "structure"}}"#,
    )
    .unwrap();
    ok(&["remap", "--in", p(&t.join("f.vxg")), "--map", p(&t.join("map.json")), "--classes", p(&t.join("classes.json")), "--out", p(&t.join("r.vxg"))]);
    let (a, b) = (load_grid(t.join("f.vxg")).unwrap(), load_grid(t.join("r.vxg")).unwrap());
    assert_eq!(b.classes().names(), ["empty", "structure", "stuff"]);
    for (i, (&x, &y)) in a.labels().iter().zip(b.labels()).enumerate() {
        let expect = match a.classes().name(x).unwrap() {
            "empty" => 0,
            "ceiling" | "floor" | "wall" | "window" => 1,
            _ => 2,
        };
        assert_eq!(y, expect, "voxel {i}");
    }
}

#[test]
fn busy_output_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, dir, poses) = views(tmp.path());
    let out = tmp.path().join("busy");
    std::fs::create_dir_all(&out).unwrap();
    // our own pid is certainly alive
    std::fs::write(out.join(occucraft::cli::LOCK_FILE), std::process::id().to_string()).unwrap();
    let args = ["--config", p(&cfg), "reconstruct", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out-dir", p(&out)];
    let res = run(&args);
    assert_eq!(res.status.code(), Some(1));
    assert!(last_json_line(&res.stderr)["message"].as_str().unwrap().contains("in use"));
    // a lock left by a dead process is taken over
    std::fs::write(out.join(occucraft::cli::LOCK_FILE), "4294967294").unwrap();
    ok(&args);
    assert!(out.join("plan.json").is_file());
}

#[test]
fn seed_is_accepted_and_ignored() {
    let tmp = tempfile::tempdir().unwrap();
    let (cfg, dir, poses) = views(tmp.path());
    let t = tmp.path();
    for (seed, d) in [("1", "a"), ("99", "b")] {
        ok(&["--seed", seed, "--config", p(&cfg), "reconstruct", "--views", p(&dir), "--poses", p(&poses), "--world-frame", "--out-dir", p(&t.join(d))]);
    }
    assert_eq!(std::fs::read(t.join("a/plan.json")).unwrap(), std::fs::read(t.join("b/plan.json")).unwrap());
}
