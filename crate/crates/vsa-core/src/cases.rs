//! Bundled reference cases.

use crate::model::NetworkCase;
use crate::parse::parse_case;

/// The IEEE 14-bus test case as distributed with MATPOWER: 14 buses,
/// 20 branches, 5 generators, 259 MW / 73.5 MVAr of load.
pub fn ieee14() -> NetworkCase {
    parse_case(include_str!("../cases/case14.m")).expect("bundled case14 parses")
}
