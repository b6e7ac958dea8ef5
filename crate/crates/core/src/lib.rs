pub mod conic;
pub mod linalg;
pub mod polytope;
pub mod regulator;
pub mod dpmm;
pub mod tightening;
pub mod mpc;
pub mod sim;
pub mod config;
