#![allow(dead_code)]

pub mod encoder_checks;
pub mod gradcheck;
pub mod oracle;
