//! Leveled stderr logging controlled by the `GMINT_LOG` environment
//! variable (`error`, `warn`, `info`, `debug`; default `warn`).

use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Level {
    Error = 0,
    Warn = 1,
    Info = 2,
    Debug = 3,
}

fn threshold() -> Level {
    static LEVEL: OnceLock<Level> = OnceLock::new();
    *LEVEL.get_or_init(|| match std::env::var("GMINT_LOG").as_deref() {
        Ok("error") => Level::Error,
        Ok("info") => Level::Info,
        Ok("debug") => Level::Debug,
        Ok("warn") | _ => Level::Warn,
    })
}

fn emit(level: Level, tag: &str, msg: &str) {
    if level <= threshold() {
        eprintln!("[{tag}] {msg}");
    }
}

pub fn error(msg: &str) {
    emit(Level::Error, "error", msg);
}

pub fn warn(msg: &str) {
    emit(Level::Warn, "warn", msg);
}

pub fn info(msg: &str) {
    emit(Level::Info, "info", msg);
}

pub fn debug(msg: &str) {
    emit(Level::Debug, "debug", msg);
}
