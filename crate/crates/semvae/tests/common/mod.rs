#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use semvae::commands;
use semvae::config::RunConfig;
use semvae_core::toy::ToyConfig;

pub const SIZE: usize = 32;
pub const CLASSES: usize = 6;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: PathBuf,
    pub run: PathBuf,
    pub config: PathBuf,
}

/// A small synthetic dataset and a one-epoch checkpoint trained on it.
pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    commands::synth_data(&data, 24, &ToyConfig { class_count: CLASSES, height: SIZE, width: SIZE }, 7).unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, run_toml("fixture", 1)).unwrap();
    let cfg = RunConfig::load(&config).unwrap();
    commands::train(&cfg, false, false).unwrap();
    let run = cfg.run_dir();
    Fixture { dir, data, run, config }
}

pub fn run_toml(name: &str, epochs: usize) -> String {
    format!(
        "name = \"{name}\"\ndata = \"data\"\nepochs = {epochs}\nbatch_size = 8\nlearning_rate = 0.001\n\
         decoder_base_channels = 16\ndecoder_stage_channels = [16]\n"
    )
}

pub fn semvae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semvae")).args(args).output().unwrap()
}

pub fn first_mask(data: &Path) -> PathBuf {
    data.join("00000.png")
}
