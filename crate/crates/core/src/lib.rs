pub mod envelope;
pub mod feeder;
pub mod market;
pub mod prosumer;
pub mod scenario;
pub mod units;
pub mod verify;

#[cfg(test)]
mod testkit;
