pub mod acc_barrier;
pub mod cli;
pub mod config;
pub mod conic;
pub mod lk_synthesis;
pub mod params;
pub mod polyalg;
pub mod riccati;
pub mod safety_filter;
pub mod simulator;
pub mod sosprog;
