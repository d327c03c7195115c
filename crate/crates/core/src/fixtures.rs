//! Bundled example workflows.

pub const EXAMPLE1: &str = include_str!("../assets/fixtures/example1.json");
pub const EXAMPLE2: &str = include_str!("../assets/fixtures/example2.json");
pub const EXAMPLE3: &str = include_str!("../assets/fixtures/example3.json");

pub const ALL: [&str; 3] = [EXAMPLE1, EXAMPLE2, EXAMPLE3];
