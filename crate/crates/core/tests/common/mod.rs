//! Oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod micro;
pub mod oracles;
