//! Checks shared by the test suites and the acceptance runner. Each returns
//! the first violation as an error message.

#![allow(dead_code)]

macro_rules! check {
    ($cond:expr) => {
        check!($cond, "failed: {}", stringify!($cond))
    };
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

#[path = "../common/mod.rs"]
pub mod common;
pub mod monotone;
pub mod oracle;
