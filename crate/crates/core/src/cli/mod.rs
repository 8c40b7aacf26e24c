//! Command-line front end and file formats.

mod commands;
mod config;
mod container;

pub use commands::{main_with_args, Cli, Command};
pub use config::{PromptSpec, RunConfig, Validated, DEFAULT_PROMPT, DEFAULT_TRANSITION};
pub use container::{
    decode_container, encode_container, export_frames, read_container, write_container, VIDEO_MAGIC,
};
