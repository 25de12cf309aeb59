//! Identifiers and records shared by every protocol stack.

use std::fmt;
use std::str::FromStr;

use md5::{Digest, Md5};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! hex_id {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = hex::FromHexError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let mut out = [0u8; $len];
                hex::decode_to_slice(s, &mut out)?;
                Ok(Self(out))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_id!(
    /// 128-bit MD5 fingerprint of a shared file.
    Md5Digest,
    16
);

hex_id!(
    /// Identifier carried in every Gnutella descriptor header.
    DescriptorId,
    16
);

hex_id!(
    /// Identifier a servent attaches to its query hits so pushes can find it.
    ServentId,
    16
);

impl Md5Digest {
    pub fn of(data: &[u8]) -> Self {
        let mut h = Md5::new();
        h.update(data);
        Self(h.finalize().into())
    }
}

/// Index of a node in a simulated network. Its servent id and address
/// are derived from the index so every stack agrees on them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(pub u32);

impl NodeId {
    pub fn servent_id(self) -> ServentId {
        ServentId(Md5Digest::of(format!("node:{}", self.0).as_bytes()).0)
    }

    /// 10.0.0.0/8 address; index 0 maps to 10.0.0.1.
    pub fn ip(self) -> std::net::Ipv4Addr {
        std::net::Ipv4Addr::from(0x0a00_0001u32 + self.0)
    }

    pub fn port(self) -> u16 {
        6346
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n{}", self.0)
    }
}

/// Metadata for one file a peer offers to the network.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SharedFileRecord {
    pub filename: String,
    pub md5: Md5Digest,
    pub size_bytes: u64,
    pub bitrate_kbps: u32,
    pub frequency_hz: u32,
    pub duration_s: u32,
}

impl SharedFileRecord {
    /// A record whose digest is derived from the name and size, used for
    /// synthetic corpora where no real file exists.
    pub fn synthetic(filename: impl Into<String>, size_bytes: u64) -> Self {
        let filename = filename.into();
        let md5 = Md5Digest::of(format!("{filename}:{size_bytes}").as_bytes());
        Self {
            filename,
            md5,
            size_bytes,
            bitrate_kbps: 128,
            frequency_hz: 44_100,
            duration_s: (size_bytes / 16_000) as u32,
        }
    }

    pub fn size_kb(&self) -> u64 {
        self.size_bytes.div_ceil(1024)
    }
}

/// Case-insensitive all-tokens substring match against a file name.
///
/// Returns false for a criteria string with no tokens.
pub fn name_matches(criteria: &str, filename: &str) -> bool {
    let name = filename.to_lowercase();
    let mut any = false;
    for token in criteria.split_whitespace() {
        any = true;
        if !name.contains(&token.to_lowercase()) {
            return false;
        }
    }
    any
}
