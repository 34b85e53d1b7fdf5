pub mod calibrate;
pub mod evaluate;
pub mod monitor;
pub mod power;
