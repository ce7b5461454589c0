//! HTTP service and command-line front end for the debate classifier.

pub mod api;
pub mod cli;
pub mod service;
pub mod sessions;
