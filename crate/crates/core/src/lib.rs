pub mod conic;
pub mod gcs;
pub mod highway;
pub mod game;
pub mod cli;
