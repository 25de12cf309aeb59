pub mod gnutella;
pub mod napster;
pub mod samples;
pub mod sim;
pub mod superpeer;
pub mod types;
pub mod wire;
