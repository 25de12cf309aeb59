//! Byte-level codecs for the three protocol families.

pub mod gnutella;
pub mod napster;
pub mod openft;
