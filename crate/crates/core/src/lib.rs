//! Detection and repair of proxy use of protected attributes in models
//! written as expression programs.

pub mod cli;
pub mod data;
pub mod detect;
pub mod expr;
pub mod frontends;
pub mod measures;
pub mod oracle;
pub mod repair;
pub mod service;
