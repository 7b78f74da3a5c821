pub mod camera;
pub mod grid;
pub mod viewvol;
pub mod world;
pub mod fusion;
pub mod centers;
pub mod matching;
pub mod plan;
pub mod rcon;
pub mod pipeline;
pub mod service;
pub mod cli;
