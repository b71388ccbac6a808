//! Configuration, command line and file formats around [`qbuf_core`].

pub mod app;
pub mod config;
pub mod exec;
pub mod output;
