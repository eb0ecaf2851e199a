use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;

pub const SCHEMA_VERSION: &str = "1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Violation,
    InputError,
}

impl Status {
    pub fn exit_code(self) -> u8 {
        match self {
            Status::Ok => 0,
            Status::InputError => 1,
            Status::Violation => 2,
        }
    }
}

/// Key order is fixed by field order here and by sorted maps inside
/// `results`; floats use the shortest round-trip form.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema_version: &'static str,
    pub config: RunConfig,
    pub status: Status,
    pub results: Value,
    pub messages: Vec<String>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is always serializable");
        s.push('\n');
        s
    }
}
