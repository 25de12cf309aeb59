use anyhow::{anyhow, bail, Context};
use clap::ValueEnum;
use peerlab::wire::{gnutella, napster, openft};

use crate::Failure;

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Wire {
    Gnutella,
    Napster,
    Openft,
}

fn clean_hex(text: &str) -> anyhow::Result<Vec<u8>> {
    let digits: String = text.chars().filter(|c| !c.is_whitespace() && *c != ':').collect();
    let digits = digits.strip_prefix("0x").unwrap_or(&digits);
    hex::decode(digits).context("malformed hex")
}

fn pretty<T: serde::Serialize>(items: &[T]) -> anyhow::Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string_pretty(item)?);
        out.push('\n');
    }
    Ok(out)
}

/// Decodes every message in `bytes` and renders it as JSON.
pub fn decode(wire: Wire, bytes: &[u8]) -> anyhow::Result<String> {
    if bytes.is_empty() {
        bail!("nothing to decode");
    }
    match wire {
        Wire::Gnutella => pretty(&gnutella::decode_stream(bytes).map_err(|e| anyhow!(e))?),
        Wire::Napster => pretty(&napster::decode_stream(bytes).map_err(|e| anyhow!(e))?),
        Wire::Openft => pretty(&openft::decode_stream(bytes).map_err(|e| anyhow!(e))?),
    }
}

/// Encodes one JSON message to hex.
pub fn encode(wire: Wire, json: &str) -> anyhow::Result<String> {
    let bytes = match wire {
        Wire::Gnutella => {
            let d: gnutella::Descriptor = serde_json::from_str(json).context("not a descriptor")?;
            gnutella::encode_descriptor(&d).map_err(|e| anyhow!(e))?
        }
        Wire::Napster => {
            let m: napster::NapsterMessage = serde_json::from_str(json).context("not a message")?;
            napster::encode_message(&m).map_err(|e| anyhow!(e))?
        }
        Wire::Openft => {
            let p: openft::OpenFtPacket = serde_json::from_str(json).context("not a packet")?;
            openft::encode_packet(&p).map_err(|e| anyhow!(e))?
        }
    };
    Ok(hex::encode(bytes))
}

pub fn run(wire: Option<Wire>, hex_in: Option<String>, json: Option<String>) -> Result<(), Failure> {
    let wire = wire.ok_or_else(|| Failure::Usage("name a protocol: gnutella, napster or openft".into()))?;
    let text = match (hex_in, json) {
        (Some(h), None) => decode(wire, &clean_hex(&h)?)?,
        (None, Some(j)) => encode(wire, &j)? + "\n",
        _ => return Err(Failure::Usage("give exactly one of --decode HEX or --encode JSON".into())),
    };
    print!("{text}");
    Ok(())
}
