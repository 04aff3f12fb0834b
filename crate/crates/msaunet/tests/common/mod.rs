#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

/// A narrow 32x32 model so CLI round trips stay quick.
pub const SMALL_CONFIG: &str = r#"
[model]
encoder = "tiny"
num_classes = 3
input_height = 32
input_width = 32
decoder_channels = [40, 32, 24, 16, 8]

[training]
epochs = 2
batch_size = 2
checkpoint_every = 0

[dataset]
synthetic_train = 2
synthetic_val = 2
mean = [0.5, 0.5, 0.5]
std = [0.5, 0.5, 0.5]
"#;

pub fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn msaunet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msaunet"))
        .args(args)
        .output()
        .expect("spawn msaunet")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
