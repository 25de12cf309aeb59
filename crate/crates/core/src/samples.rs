//! Random well-formed protocol messages, for fuzzing codecs and benches.

use std::net::Ipv4Addr;

use rand::Rng;

use crate::types::{DescriptorId, Md5Digest, ServentId, SharedFileRecord};
use crate::wire::gnutella::{
    Descriptor, Payload, PayloadKind, PongPayload, PushPayload, QueryHitPayload, QueryHitResult,
    QueryPayload,
};
use crate::wire::napster::{
    codes, DownloadAck, LoginInfo, NapsterMessage, Range, ResultRecord, SearchQuery,
};
use crate::wire::openft::{
    ChildMsg, ChildOp, NodeAddr, NodeInfo, OpenFtPacket, OpenFtPayload, PacketKind,
};

/// The fourteen Napster function codes the codec interprets.
pub const NAPSTER_KINDS: [u16; 14] = [
    codes::LOGIN,
    codes::NEW_USER_LOGIN,
    codes::LOGIN_ACK,
    codes::SHARE_NOTIFY,
    codes::SEARCH,
    codes::BROWSE,
    codes::SEARCH_RESPONSE,
    codes::BROWSE_RESPONSE,
    codes::DOWNLOAD_REQUEST,
    codes::DOWNLOAD_ACK,
    codes::ALT_DOWNLOAD_REQUEST,
    codes::ALT_DOWNLOAD_ACK,
    codes::DOWNLOADING_FILE,
    codes::DOWNLOAD_COMPLETE,
];

const ALPHABET: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ._-()[]'!&";

fn text<R: Rng>(rng: &mut R, min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n)
        .map(|_| ALPHABET[rng.random_range(0..ALPHABET.len())] as char)
        .collect()
}

fn word<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(1..=12);
    (0..n)
        .map(|_| ALPHABET[rng.random_range(0..62)] as char)
        .collect()
}

fn ip<R: Rng>(rng: &mut R) -> Ipv4Addr {
    Ipv4Addr::from(rng.random::<u32>())
}

pub fn file_record<R: Rng>(rng: &mut R) -> SharedFileRecord {
    SharedFileRecord {
        filename: text(rng, 1, 40),
        md5: Md5Digest(rng.random()),
        size_bytes: rng.random_range(0..u32::MAX as u64),
        bitrate_kbps: rng.random_range(0..=320),
        frequency_hz: rng.random_range(8_000..=48_000),
        duration_s: rng.random_range(0..=3600),
    }
}

pub fn gnutella_payload<R: Rng>(rng: &mut R, kind: PayloadKind) -> Payload {
    match kind {
        PayloadKind::Ping => Payload::Ping,
        PayloadKind::Pong => Payload::Pong(PongPayload {
            port: rng.random(),
            ip: ip(rng),
            files_shared: rng.random(),
            kilobytes_shared: rng.random(),
        }),
        PayloadKind::Query => Payload::Query(QueryPayload {
            min_speed: rng.random(),
            criteria: word(rng) + &text(rng, 0, 20),
        }),
        PayloadKind::QueryHit => {
            let n = rng.random_range(0..=8);
            Payload::QueryHit(QueryHitPayload {
                port: rng.random(),
                ip: ip(rng),
                speed: rng.random(),
                results: (0..n)
                    .map(|_| QueryHitResult {
                        file_index: rng.random(),
                        file_size: rng.random(),
                        file_name: text(rng, 0, 30),
                    })
                    .collect(),
                servent_id: ServentId(rng.random()),
            })
        }
        PayloadKind::Push => Payload::Push(PushPayload {
            servent_id: ServentId(rng.random()),
            file_index: rng.random(),
            ip: ip(rng),
            port: rng.random(),
        }),
    }
}

pub fn gnutella_descriptor<R: Rng>(rng: &mut R, kind: PayloadKind) -> Descriptor {
    let initial: u8 = rng.random_range(1..=16);
    let hops = rng.random_range(0..initial);
    Descriptor::new(
        DescriptorId(rng.random()),
        initial - hops,
        hops,
        gnutella_payload(rng, kind),
    )
}

fn opt_range<R: Rng>(rng: &mut R, hi: u32) -> Option<Range> {
    rng.random_bool(0.5).then(|| {
        let a = rng.random_range(0..=hi);
        let b = rng.random_range(0..=hi);
        Range {
            min: a.min(b),
            max: a.max(b),
        }
    })
}

fn result_record<R: Rng>(rng: &mut R) -> ResultRecord {
    ResultRecord {
        file: file_record(rng),
        nick: word(rng),
        ip: ip(rng),
        link_type: rng.random_range(0..=10),
    }
}

fn download_ack<R: Rng>(rng: &mut R) -> DownloadAck {
    DownloadAck {
        nick: word(rng),
        ip: ip(rng),
        port: rng.random(),
        filename: text(rng, 0, 40),
        md5: Md5Digest(rng.random()),
        link_type: rng.random_range(0..=10),
    }
}

pub fn napster_message<R: Rng>(rng: &mut R, function: u16) -> NapsterMessage {
    let login = |rng: &mut R, email: bool| LoginInfo {
        nick: word(rng),
        password: text(rng, 0, 16),
        port: if rng.random_bool(0.2) { 0 } else { rng.random() },
        client_info: text(rng, 0, 20),
        link_type: rng.random_range(0..=10),
        email: email.then(|| format!("{}@{}", word(rng), word(rng))),
    };
    match function {
        codes::LOGIN => NapsterMessage::Login(login(rng, false)),
        codes::NEW_USER_LOGIN => NapsterMessage::NewUserLogin(login(rng, true)),
        codes::LOGIN_ACK => NapsterMessage::LoginAck {
            email: text(rng, 0, 30),
        },
        codes::SHARE_NOTIFY => NapsterMessage::ShareNotify(file_record(rng)),
        codes::SEARCH => NapsterMessage::Search(SearchQuery {
            artist: rng.random_bool(0.7).then(|| text(rng, 0, 20)),
            title: rng.random_bool(0.5).then(|| text(rng, 0, 20)),
            bitrate_range: opt_range(rng, 320),
            max_results: rng.random_range(1..=500),
            link_type_range: opt_range(rng, 10),
            frequency_range: opt_range(rng, 48_000),
        }),
        codes::BROWSE => NapsterMessage::Browse { nick: word(rng) },
        codes::SEARCH_RESPONSE => NapsterMessage::SearchResponse(result_record(rng)),
        codes::BROWSE_RESPONSE => {
            let n = rng.random_range(0..=5);
            NapsterMessage::BrowseResponse {
                entries: (0..n).map(|_| result_record(rng)).collect(),
            }
        }
        codes::DOWNLOAD_REQUEST => NapsterMessage::DownloadRequest {
            nick: word(rng),
            filename: text(rng, 0, 40),
        },
        codes::ALT_DOWNLOAD_REQUEST => NapsterMessage::AltDownloadRequest {
            nick: word(rng),
            filename: text(rng, 0, 40),
        },
        codes::DOWNLOADING_FILE => NapsterMessage::DownloadingFile {
            nick: word(rng),
            filename: text(rng, 0, 40),
        },
        codes::DOWNLOAD_COMPLETE => NapsterMessage::DownloadComplete {
            nick: word(rng),
            filename: text(rng, 0, 40),
        },
        codes::DOWNLOAD_ACK => NapsterMessage::DownloadAck(download_ack(rng)),
        codes::ALT_DOWNLOAD_ACK => NapsterMessage::AltDownloadAck(download_ack(rng)),
        codes::ERROR => NapsterMessage::Error {
            text: text(rng, 0, 30),
        },
        other => {
            let n = rng.random_range(0..64);
            NapsterMessage::Unknown {
                function: other,
                payload: (0..n).map(|_| rng.random()).collect(),
            }
        }
    }
}

pub fn openft_packet<R: Rng>(rng: &mut R, kind: PacketKind) -> OpenFtPacket {
    let kv = |rng: &mut R| {
        let n = rng.random_range(0..5);
        (0..n)
            .map(|_| {
                let len = rng.random_range(0..16);
                (word(rng), (0..len).map(|_| rng.random()).collect())
            })
            .collect()
    };
    let payload = match kind {
        PacketKind::NodeInfo => OpenFtPayload::NodeInfo(NodeInfo {
            ip: ip(rng),
            port: rng.random(),
            http_port: rng.random(),
            class: rng.random_range(0..8),
        }),
        PacketKind::Child => OpenFtPayload::Child(ChildMsg {
            op: [ChildOp::Request, ChildOp::Accept, ChildOp::Deny][rng.random_range(0..3)],
            target: NodeAddr {
                ip: ip(rng),
                port: rng.random(),
            },
        }),
        PacketKind::AddShare | PacketKind::RemShare | PacketKind::ModShare => {
            OpenFtPayload::Share(file_record(rng))
        }
        PacketKind::NodeCap | PacketKind::Session | PacketKind::Stats => {
            OpenFtPayload::KeyValues(kv(rng))
        }
        _ => {
            let n = rng.random_range(0..48);
            OpenFtPayload::Opaque((0..n).map(|_| rng.random()).collect())
        }
    };
    OpenFtPacket {
        flags: rng.random_range(0..16),
        kind,
        payload,
    }
}
