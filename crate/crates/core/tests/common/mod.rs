#![allow(dead_code)]

pub mod checks;
pub mod dense;
pub mod reference;
