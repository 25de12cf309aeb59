//! Peer-to-peer file transfer dialogues, normal and firewalled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::types::{Md5Digest, SharedFileRecord};
use crate::wire::napster::{tokenize, NapsterMessage};

pub const GET: &[u8] = b"GET";
pub const SEND: &[u8] = b"SEND";
pub const FIREWALL_GREETING: &[u8] = b"1";
pub const INVALID_REQUEST: &[u8] = b"INVALID REQUEST";
pub const FILE_NOT_SHARED: &[u8] = b"FILE NOT SHARED";

/// Deterministic stand-in for a file's bytes: a keystream seeded by the
/// file's digest. Returns bytes `offset..size`.
pub fn file_bytes(md5: &Md5Digest, size: u64, offset: u64) -> Vec<u8> {
    if offset >= size {
        return Vec::new();
    }
    let mut seed = [0u8; 32];
    seed[..16].copy_from_slice(md5.as_bytes());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_word_pos(u128::from(offset / 4));
    let skip = (offset % 4) as usize;
    let mut buf = vec![0u8; (size - offset) as usize + skip];
    rng.fill_bytes(&mut buf);
    buf.drain(..skip);
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Phase {
    Greet,
    Request,
    Offset,
    Stream,
    Done,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Direction {
    Normal,
    Firewalled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Downloader,
    Uploader,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferDialogue {
    pub phase: Phase,
    pub offset: u64,
    pub direction: Direction,
}

impl TransferDialogue {
    pub fn new(direction: Direction) -> Self {
        Self {
            phase: Phase::Greet,
            offset: 0,
            direction,
        }
    }

    fn advance(&mut self, to: Phase) {
        assert!(
            to >= self.phase && self.phase < Phase::Done,
            "phase {:?} cannot follow {:?}",
            to,
            self.phase
        );
        self.phase = to;
    }
}

/// One packet on the peer-to-peer connection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Packet {
    pub from: Side,
    pub bytes: Vec<u8>,
}

/// What the downloader wants.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferRequest {
    pub nick: String,
    pub filename: String,
    pub offset: u64,
}

/// The sharing side: its nick and shares.
#[derive(Debug, Clone, Copy)]
pub struct Uploader<'a> {
    pub nick: &'a str,
    pub shares: &'a [SharedFileRecord],
}

impl Uploader<'_> {
    fn find(&self, filename: &str) -> Option<&SharedFileRecord> {
        self.shares.iter().find(|f| f.filename == filename)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TransferReport {
    pub dialogue: TransferDialogue,
    /// Which side opened the TCP connection.
    pub opened_by: Side,
    pub packets: Vec<Packet>,
    pub file_size: Option<u64>,
    /// File bytes the downloader received.
    pub received: Vec<u8>,
    /// Control messages the downloader sends to the index server.
    pub notices: Vec<NapsterMessage>,
}

struct Run {
    report: TransferReport,
}

impl Run {
    fn new(direction: Direction, opened_by: Side) -> Self {
        Self {
            report: TransferReport {
                dialogue: TransferDialogue::new(direction),
                opened_by,
                packets: Vec::new(),
                file_size: None,
                received: Vec::new(),
                notices: Vec::new(),
            },
        }
    }

    fn send(&mut self, from: Side, bytes: impl Into<Vec<u8>>) {
        self.report.packets.push(Packet {
            from,
            bytes: bytes.into(),
        });
    }

    fn fail(mut self) -> TransferReport {
        self.report.dialogue.advance(Phase::Failed);
        self.report
    }

    fn stream(mut self, uploader: &str, file: &SharedFileRecord, offset: u64) -> TransferReport {
        let r = &mut self.report;
        r.dialogue.advance(Phase::Stream);
        r.notices.push(NapsterMessage::DownloadingFile {
            nick: uploader.to_owned(),
            filename: file.filename.clone(),
        });
        let data = file_bytes(&file.md5, file.size_bytes, offset);
        r.received.extend_from_slice(&data);
        r.packets.push(Packet {
            from: Side::Uploader,
            bytes: data,
        });
        r.dialogue.advance(Phase::Done);
        r.notices.push(NapsterMessage::DownloadComplete {
            nick: uploader.to_owned(),
            filename: file.filename.clone(),
        });
        self.report
    }
}

fn request_line(nick: &str, filename: &str, number: u64) -> Vec<u8> {
    format!("{nick} \"{filename}\" {number}").into_bytes()
}

fn parse_request_line(bytes: &[u8]) -> Option<(String, String, u64)> {
    let text = std::str::from_utf8(bytes).ok()?;
    let mut f = tokenize(text).ok()?.into_iter();
    let (nick, filename, n) = (f.next()?, f.next()?, f.next()?);
    if f.next().is_some() {
        return None;
    }
    Some((nick, filename, n.parse().ok()?))
}

/// Downloader connects to the uploader's data port, sends `GET` and then
/// `<nick> "<filename>" <offset>`; the uploader answers with the file size
/// in ASCII and streams from the offset.
pub fn client_transfer_normal(req: &TransferRequest, uploader: Uploader<'_>) -> TransferReport {
    let mut run = Run::new(Direction::Normal, Side::Downloader);
    run.send(Side::Downloader, GET);
    run.report.dialogue.advance(Phase::Request);
    run.send(Side::Downloader, request_line(&req.nick, &req.filename, req.offset));

    // Uploader side.
    let parsed = parse_request_line(&run.report.packets[1].bytes);
    let Some((_, filename, offset)) = parsed else {
        run.send(Side::Uploader, INVALID_REQUEST);
        return run.fail();
    };
    let Some(file) = uploader.find(&filename) else {
        run.send(Side::Uploader, FILE_NOT_SHARED);
        return run.fail();
    };
    if offset > file.size_bytes {
        run.send(Side::Uploader, INVALID_REQUEST);
        return run.fail();
    }
    run.report.dialogue.advance(Phase::Offset);
    run.report.dialogue.offset = offset;
    run.report.file_size = Some(file.size_bytes);
    run.send(Side::Uploader, file.size_bytes.to_string());
    run.stream(uploader.nick, file, offset)
}

/// The uploader sits behind a firewall and connects out to the
/// downloader. The downloader greets with `1`; the uploader sends `SEND`
/// and `<nick> "<filename>" <size>`; the downloader replies with an ASCII
/// offset or `INVALID REQUEST`.
pub fn client_transfer_firewalled(req: &TransferRequest, uploader: Uploader<'_>) -> TransferReport {
    let mut run = Run::new(Direction::Firewalled, Side::Uploader);
    run.send(Side::Downloader, FIREWALL_GREETING);
    run.report.dialogue.advance(Phase::Request);
    let Some(file) = uploader.find(&req.filename) else {
        return run.fail();
    };
    run.send(Side::Uploader, SEND);
    run.send(Side::Uploader, request_line(uploader.nick, &file.filename, file.size_bytes));

    // Downloader side: accept only the file it asked for, at an offset
    // that fits.
    let announced = parse_request_line(&run.report.packets[2].bytes);
    match announced {
        Some((_, name, size)) if name == req.filename && req.offset <= size => {
            run.report.dialogue.advance(Phase::Offset);
            run.report.dialogue.offset = req.offset;
            run.report.file_size = Some(size);
            run.send(Side::Downloader, req.offset.to_string());
            run.stream(uploader.nick, file, req.offset)
        }
        _ => {
            run.send(Side::Downloader, INVALID_REQUEST);
            run.fail()
        }
    }
}
