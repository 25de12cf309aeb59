//! Napster client/server message codec.
//!
//! Every message is a 4-byte header, `length: u16 LE` then
//! `function: u16 LE`, followed by `length` bytes of ASCII payload. Payload
//! fields are separated by single blanks. A field that is empty or contains
//! a blank is wrapped in double quotes; file names are always quoted.
//! Double quotes inside a field cannot be represented.

use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Md5Digest, SharedFileRecord};

pub const HEADER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = u16::MAX as usize;

/// Dummy address returned in a login ack for an unregistered nick.
pub const ANONYMOUS_EMAIL: &str = "anon@napster";

pub mod codes {
    pub const ERROR: u16 = 0x00;
    pub const LOGIN: u16 = 0x02;
    pub const LOGIN_ACK: u16 = 0x03;
    pub const NEW_USER_LOGIN: u16 = 0x06;
    pub const SHARE_NOTIFY: u16 = 0x64;
    pub const SEARCH: u16 = 0xC8;
    pub const SEARCH_RESPONSE: u16 = 0xC9;
    pub const DOWNLOAD_REQUEST: u16 = 0xCB;
    pub const DOWNLOAD_ACK: u16 = 0xCC;
    pub const BROWSE: u16 = 0xD3;
    pub const BROWSE_RESPONSE: u16 = 0xD4;
    pub const DOWNLOADING_FILE: u16 = 0xDA;
    pub const DOWNLOAD_COMPLETE: u16 = 0xDB;
    pub const ALT_DOWNLOAD_REQUEST: u16 = 0x1F4;
    pub const ALT_DOWNLOAD_ACK: u16 = 0x1F5;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NapsterError {
    #[error("need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("payload of {0} bytes exceeds 65535")]
    Oversize(usize),
    #[error("field {0:?} is not printable ASCII without quotes or newlines")]
    Unrepresentable(String),
    #[error("payload is not ASCII")]
    NotAscii,
    #[error("unbalanced quote in payload")]
    UnbalancedQuote,
    #[error("message 0x{function:x} expects {expected} fields, got {got}")]
    FieldCount {
        function: u16,
        expected: usize,
        got: usize,
    },
    #[error("bad {field}: {value:?}")]
    BadField { field: &'static str, value: String },
    #[error("link type {0} outside 0..=10")]
    LinkType(u32),
    #[error("search clause error: {0}")]
    Search(String),
    #[error("{0}")]
    Inconsistent(&'static str),
}

/// Bandwidth label for a login link-type code.
pub fn link_type_label(code: i64) -> &'static str {
    match code {
        1 => "14.4 kbps",
        2 => "28.8 kbps",
        3 => "33.6 kbps",
        4 => "56.7 kbps",
        5 => "64k ISDN",
        6 => "128k ISDN",
        7 => "Cable",
        8 => "DSL",
        9 => "T1",
        10 => "T3 or greater",
        _ => "unknown",
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoginInfo {
    pub nick: String,
    pub password: String,
    /// Data port; 0 means the client is firewalled.
    pub port: u16,
    pub client_info: String,
    pub link_type: u8,
    /// Present only on a new-user login.
    pub email: Option<String>,
}

/// Inclusive numeric range used by search filters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub min: u32,
    pub max: u32,
}

impl Range {
    pub fn contains(&self, v: u32) -> bool {
        self.min <= v && v <= self.max
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchQuery {
    pub artist: Option<String>,
    pub title: Option<String>,
    pub bitrate_range: Option<Range>,
    pub max_results: u32,
    pub link_type_range: Option<Range>,
    pub frequency_range: Option<Range>,
}

impl SearchQuery {
    pub fn by_name(artist: Option<&str>, title: Option<&str>, max_results: u32) -> Self {
        Self {
            artist: artist.map(str::to_owned),
            title: title.map(str::to_owned),
            bitrate_range: None,
            max_results,
            link_type_range: None,
            frequency_range: None,
        }
    }

    fn validate(&self) -> Result<(), NapsterError> {
        if self.max_results == 0 {
            return Err(NapsterError::Search("max_results must be at least 1".into()));
        }
        for r in [self.bitrate_range, self.link_type_range, self.frequency_range]
            .into_iter()
            .flatten()
        {
            if r.min > r.max {
                return Err(NapsterError::Search(format!("range {}..{} is reversed", r.min, r.max)));
            }
        }
        Ok(())
    }
}

/// One search or browse result row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub file: SharedFileRecord,
    pub nick: String,
    pub ip: Ipv4Addr,
    pub link_type: u8,
}

/// Body shared by download acks and alternate download acks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DownloadAck {
    pub nick: String,
    pub ip: Ipv4Addr,
    pub port: u16,
    pub filename: String,
    pub md5: Md5Digest,
    pub link_type: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NapsterMessage {
    Error { text: String },
    Login(LoginInfo),
    NewUserLogin(LoginInfo),
    LoginAck { email: String },
    ShareNotify(SharedFileRecord),
    Search(SearchQuery),
    SearchResponse(ResultRecord),
    Browse { nick: String },
    BrowseResponse { entries: Vec<ResultRecord> },
    DownloadRequest { nick: String, filename: String },
    DownloadAck(DownloadAck),
    AltDownloadRequest { nick: String, filename: String },
    AltDownloadAck(DownloadAck),
    DownloadingFile { nick: String, filename: String },
    DownloadComplete { nick: String, filename: String },
    /// A function code this codec does not interpret; payload kept verbatim.
    Unknown { function: u16, payload: Vec<u8> },
}

impl NapsterMessage {
    pub fn function(&self) -> u16 {
        use codes::*;
        match self {
            Self::Error { .. } => ERROR,
            Self::Login(_) => LOGIN,
            Self::NewUserLogin(_) => NEW_USER_LOGIN,
            Self::LoginAck { .. } => LOGIN_ACK,
            Self::ShareNotify(_) => SHARE_NOTIFY,
            Self::Search(_) => SEARCH,
            Self::SearchResponse(_) => SEARCH_RESPONSE,
            Self::Browse { .. } => BROWSE,
            Self::BrowseResponse { .. } => BROWSE_RESPONSE,
            Self::DownloadRequest { .. } => DOWNLOAD_REQUEST,
            Self::DownloadAck(_) => DOWNLOAD_ACK,
            Self::AltDownloadRequest { .. } => ALT_DOWNLOAD_REQUEST,
            Self::AltDownloadAck(_) => ALT_DOWNLOAD_ACK,
            Self::DownloadingFile { .. } => DOWNLOADING_FILE,
            Self::DownloadComplete { .. } => DOWNLOAD_COMPLETE,
            Self::Unknown { function, .. } => *function,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Error { .. } => "error",
            Self::Login(_) => "login",
            Self::NewUserLogin(_) => "new_user_login",
            Self::LoginAck { .. } => "login_ack",
            Self::ShareNotify(_) => "share_notify",
            Self::Search(_) => "search",
            Self::SearchResponse(_) => "search_response",
            Self::Browse { .. } => "browse",
            Self::BrowseResponse { .. } => "browse_response",
            Self::DownloadRequest { .. } => "download_request",
            Self::DownloadAck(_) => "download_ack",
            Self::AltDownloadRequest { .. } => "alt_download_request",
            Self::AltDownloadAck(_) => "alt_download_ack",
            Self::DownloadingFile { .. } => "downloading_file",
            Self::DownloadComplete { .. } => "download_complete",
            Self::Unknown { .. } => "unknown",
        }
    }

    /// Payload split into fields, with quoting already removed.
    fn fields(&self) -> Result<Vec<Field>, NapsterError> {
        let mut f = Vec::new();
        match self {
            Self::Error { text } => f.push(Field::text(text)),
            Self::Login(l) | Self::NewUserLogin(l) => {
                check_link(l.link_type as u32)?;
                let wants_email = matches!(self, Self::NewUserLogin(_));
                if wants_email != l.email.is_some() {
                    return Err(NapsterError::Inconsistent(
                        "email is carried by new-user logins only",
                    ));
                }
                f.push(Field::text(&l.nick));
                f.push(Field::text(&l.password));
                f.push(Field::num(l.port));
                f.push(Field::text(&l.client_info));
                f.push(Field::num(l.link_type));
                if let Some(e) = &l.email {
                    f.push(Field::text(e));
                }
            }
            Self::LoginAck { email } => f.push(Field::text(email)),
            Self::ShareNotify(rec) => push_record(&mut f, rec),
            Self::Search(q) => {
                q.validate()?;
                push_search(&mut f, q);
            }
            Self::SearchResponse(r) => push_result(&mut f, r)?,
            Self::BrowseResponse { entries } => {
                for r in entries {
                    push_result(&mut f, r)?;
                }
            }
            Self::Browse { nick } => f.push(Field::text(nick)),
            Self::DownloadRequest { nick, filename }
            | Self::AltDownloadRequest { nick, filename }
            | Self::DownloadingFile { nick, filename }
            | Self::DownloadComplete { nick, filename } => {
                f.push(Field::text(nick));
                f.push(Field::quoted(filename));
            }
            Self::DownloadAck(a) | Self::AltDownloadAck(a) => {
                check_link(a.link_type as u32)?;
                f.push(Field::text(&a.nick));
                f.push(Field::num(u32::from(a.ip)));
                f.push(Field::num(a.port));
                f.push(Field::quoted(&a.filename));
                f.push(Field::text(&a.md5.to_hex()));
                f.push(Field::num(a.link_type));
            }
            Self::Unknown { .. } => unreachable!("unknown payloads are raw"),
        }
        Ok(f)
    }
}

struct Field {
    text: String,
    always_quote: bool,
}

impl Field {
    fn text(s: &str) -> Self {
        Self {
            text: s.to_owned(),
            always_quote: false,
        }
    }

    fn quoted(s: &str) -> Self {
        Self {
            text: s.to_owned(),
            always_quote: true,
        }
    }

    fn num(n: impl ToString) -> Self {
        Self::text(&n.to_string())
    }
}

fn push_record(f: &mut Vec<Field>, rec: &SharedFileRecord) {
    f.push(Field::quoted(&rec.filename));
    f.push(Field::text(&rec.md5.to_hex()));
    f.push(Field::num(rec.size_bytes));
    f.push(Field::num(rec.bitrate_kbps));
    f.push(Field::num(rec.frequency_hz));
    f.push(Field::num(rec.duration_s));
}

fn push_result(f: &mut Vec<Field>, r: &ResultRecord) -> Result<(), NapsterError> {
    check_link(r.link_type as u32)?;
    push_record(f, &r.file);
    f.push(Field::text(&r.nick));
    f.push(Field::num(u32::from(r.ip)));
    f.push(Field::num(r.link_type));
    Ok(())
}

const KW_ARTIST: &str = "ARTIST";
const KW_TITLE: &str = "TITLE";
const KW_BITRATE: &str = "BITRATE";
const KW_MAX: &str = "MAX_RESULTS";
const KW_LINK: &str = "LINKTYPE";
const KW_FREQ: &str = "FREQ";

// Clauses follow the fixed order artist, title, bitrate, max, link type,
// frequency; absent ones are omitted.
fn push_search(f: &mut Vec<Field>, q: &SearchQuery) {
    let range = |f: &mut Vec<Field>, kw: &str, r: &Option<Range>| {
        if let Some(r) = r {
            f.push(Field::text(kw));
            f.push(Field::num(r.min));
            f.push(Field::num(r.max));
        }
    };
    if let Some(a) = &q.artist {
        f.push(Field::text(KW_ARTIST));
        f.push(Field::quoted(a));
    }
    if let Some(t) = &q.title {
        f.push(Field::text(KW_TITLE));
        f.push(Field::quoted(t));
    }
    range(f, KW_BITRATE, &q.bitrate_range);
    f.push(Field::text(KW_MAX));
    f.push(Field::num(q.max_results));
    range(f, KW_LINK, &q.link_type_range);
    range(f, KW_FREQ, &q.frequency_range);
}

fn parse_search(tokens: &[String]) -> Result<SearchQuery, NapsterError> {
    let mut q = SearchQuery {
        artist: None,
        title: None,
        bitrate_range: None,
        max_results: 0,
        link_type_range: None,
        frequency_range: None,
    };
    let mut seen_max = false;
    let mut i = 0;
    let take = |i: &mut usize, n: usize| -> Result<&[String], NapsterError> {
        let s = tokens
            .get(*i + 1..*i + 1 + n)
            .ok_or_else(|| NapsterError::Search(format!("clause {} is cut short", tokens[*i])))?;
        *i += 1 + n;
        Ok(s)
    };
    let set_once = |slot: &mut Option<Range>, kw: &str, args: &[String]| {
        if slot.is_some() {
            return Err(NapsterError::Search(format!("duplicate {kw}")));
        }
        *slot = Some(Range {
            min: parse_num(&args[0], "range")?,
            max: parse_num(&args[1], "range")?,
        });
        Ok(())
    };
    while i < tokens.len() {
        match tokens[i].as_str() {
            KW_ARTIST | KW_TITLE => {
                let is_artist = tokens[i] == KW_ARTIST;
                let v = take(&mut i, 1)?[0].clone();
                let slot = if is_artist { &mut q.artist } else { &mut q.title };
                if slot.replace(v).is_some() {
                    return Err(NapsterError::Search("duplicate name clause".into()));
                }
            }
            KW_BITRATE => set_once(&mut q.bitrate_range, KW_BITRATE, take(&mut i, 2)?)?,
            KW_LINK => set_once(&mut q.link_type_range, KW_LINK, take(&mut i, 2)?)?,
            KW_FREQ => set_once(&mut q.frequency_range, KW_FREQ, take(&mut i, 2)?)?,
            KW_MAX => {
                if seen_max {
                    return Err(NapsterError::Search("duplicate MAX_RESULTS".into()));
                }
                seen_max = true;
                q.max_results = parse_num(&take(&mut i, 1)?[0], "max results")?;
            }
            other => return Err(NapsterError::Search(format!("unknown clause {other:?}"))),
        }
    }
    if !seen_max {
        return Err(NapsterError::Search("missing MAX_RESULTS".into()));
    }
    q.validate()?;
    Ok(q)
}

fn check_link(v: u32) -> Result<u8, NapsterError> {
    if v <= 10 {
        Ok(v as u8)
    } else {
        Err(NapsterError::LinkType(v))
    }
}

fn render_field(f: &Field, out: &mut Vec<u8>) -> Result<(), NapsterError> {
    let s = &f.text;
    if s.bytes().any(|b| !(0x20..0x7f).contains(&b) || b == b'"') {
        return Err(NapsterError::Unrepresentable(s.clone()));
    }
    if f.always_quote || s.is_empty() || s.contains(' ') {
        out.push(b'"');
        out.extend_from_slice(s.as_bytes());
        out.push(b'"');
    } else {
        out.extend_from_slice(s.as_bytes());
    }
    Ok(())
}

/// Splits a payload on blanks outside double quotes.
pub fn tokenize(payload: &str) -> Result<Vec<String>, NapsterError> {
    let mut out = Vec::new();
    let mut chars = payload.chars().peekable();
    loop {
        while chars.peek() == Some(&' ') {
            chars.next();
        }
        let Some(&c) = chars.peek() else { break };
        let mut tok = String::new();
        if c == '"' {
            chars.next();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some(ch) => tok.push(ch),
                    None => return Err(NapsterError::UnbalancedQuote),
                }
            }
            if matches!(chars.peek(), Some(ch) if *ch != ' ') {
                return Err(NapsterError::UnbalancedQuote);
            }
        } else {
            while let Some(&ch) = chars.peek() {
                if ch == ' ' {
                    break;
                }
                if ch == '"' {
                    return Err(NapsterError::UnbalancedQuote);
                }
                tok.push(ch);
                chars.next();
            }
        }
        out.push(tok);
    }
    Ok(out)
}

pub fn encode_message(msg: &NapsterMessage) -> Result<Vec<u8>, NapsterError> {
    let payload = match msg {
        NapsterMessage::Unknown { payload, .. } => payload.clone(),
        _ => {
            let mut p = Vec::new();
            for (i, f) in msg.fields()?.iter().enumerate() {
                if i > 0 {
                    p.push(b' ');
                }
                render_field(f, &mut p)?;
            }
            p
        }
    };
    if payload.len() > MAX_PAYLOAD {
        return Err(NapsterError::Oversize(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(&msg.function().to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes the message at the front of `bytes`, returning it with the
/// number of bytes consumed.
pub fn decode_message(bytes: &[u8]) -> Result<(NapsterMessage, usize), NapsterError> {
    if bytes.len() < HEADER_LEN {
        return Err(NapsterError::Truncated {
            need: HEADER_LEN,
            have: bytes.len(),
        });
    }
    let len = u16::from_le_bytes([bytes[0], bytes[1]]) as usize;
    let function = u16::from_le_bytes([bytes[2], bytes[3]]);
    let total = HEADER_LEN + len;
    if bytes.len() < total {
        return Err(NapsterError::Truncated {
            need: total,
            have: bytes.len(),
        });
    }
    let raw = &bytes[HEADER_LEN..total];
    Ok((decode_payload(function, raw)?, total))
}

pub fn decode_stream(mut bytes: &[u8]) -> Result<Vec<NapsterMessage>, NapsterError> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let (m, used) = decode_message(bytes)?;
        out.push(m);
        bytes = &bytes[used..];
    }
    Ok(out)
}

fn decode_payload(function: u16, raw: &[u8]) -> Result<NapsterMessage, NapsterError> {
    use codes::*;
    let known = matches!(
        function,
        ERROR
            | LOGIN
            | LOGIN_ACK
            | NEW_USER_LOGIN
            | SHARE_NOTIFY
            | SEARCH
            | SEARCH_RESPONSE
            | DOWNLOAD_REQUEST
            | DOWNLOAD_ACK
            | BROWSE
            | BROWSE_RESPONSE
            | DOWNLOADING_FILE
            | DOWNLOAD_COMPLETE
            | ALT_DOWNLOAD_REQUEST
            | ALT_DOWNLOAD_ACK
    );
    if !known {
        return Ok(NapsterMessage::Unknown {
            function,
            payload: raw.to_vec(),
        });
    }
    if !raw.is_ascii() {
        return Err(NapsterError::NotAscii);
    }
    let text = std::str::from_utf8(raw).expect("ascii is utf-8");
    let t = tokenize(text)?;
    let want = |n: usize| {
        if t.len() == n {
            Ok(())
        } else {
            Err(NapsterError::FieldCount {
                function,
                expected: n,
                got: t.len(),
            })
        }
    };
    let msg = match function {
        ERROR => {
            want(1)?;
            NapsterMessage::Error { text: t[0].clone() }
        }
        LOGIN | NEW_USER_LOGIN => {
            let new_user = function == NEW_USER_LOGIN;
            want(if new_user { 6 } else { 5 })?;
            let info = LoginInfo {
                nick: t[0].clone(),
                password: t[1].clone(),
                port: parse_num(&t[2], "port")?,
                client_info: t[3].clone(),
                link_type: check_link(parse_num(&t[4], "link type")?)?,
                email: new_user.then(|| t[5].clone()),
            };
            if new_user {
                NapsterMessage::NewUserLogin(info)
            } else {
                NapsterMessage::Login(info)
            }
        }
        LOGIN_ACK => {
            want(1)?;
            NapsterMessage::LoginAck { email: t[0].clone() }
        }
        SHARE_NOTIFY => {
            want(6)?;
            NapsterMessage::ShareNotify(parse_record(&t)?)
        }
        SEARCH => NapsterMessage::Search(parse_search(&t)?),
        SEARCH_RESPONSE => {
            want(9)?;
            NapsterMessage::SearchResponse(parse_result(&t)?)
        }
        BROWSE_RESPONSE => {
            if t.len() % 9 != 0 {
                return Err(NapsterError::FieldCount {
                    function,
                    expected: (t.len() / 9 + 1) * 9,
                    got: t.len(),
                });
            }
            NapsterMessage::BrowseResponse {
                entries: t.chunks(9).map(parse_result).collect::<Result<_, _>>()?,
            }
        }
        BROWSE => {
            want(1)?;
            NapsterMessage::Browse { nick: t[0].clone() }
        }
        DOWNLOAD_REQUEST | ALT_DOWNLOAD_REQUEST | DOWNLOADING_FILE | DOWNLOAD_COMPLETE => {
            want(2)?;
            let (nick, filename) = (t[0].clone(), t[1].clone());
            match function {
                DOWNLOAD_REQUEST => NapsterMessage::DownloadRequest { nick, filename },
                ALT_DOWNLOAD_REQUEST => NapsterMessage::AltDownloadRequest { nick, filename },
                DOWNLOADING_FILE => NapsterMessage::DownloadingFile { nick, filename },
                _ => NapsterMessage::DownloadComplete { nick, filename },
            }
        }
        DOWNLOAD_ACK | ALT_DOWNLOAD_ACK => {
            want(6)?;
            let ack = DownloadAck {
                nick: t[0].clone(),
                ip: Ipv4Addr::from(parse_num::<u32>(&t[1], "ip")?),
                port: parse_num(&t[2], "port")?,
                filename: t[3].clone(),
                md5: parse_md5(&t[4])?,
                link_type: check_link(parse_num(&t[5], "link type")?)?,
            };
            if function == DOWNLOAD_ACK {
                NapsterMessage::DownloadAck(ack)
            } else {
                NapsterMessage::AltDownloadAck(ack)
            }
        }
        _ => unreachable!("filtered above"),
    };
    Ok(msg)
}

fn parse_num<T: std::str::FromStr>(s: &str, field: &'static str) -> Result<T, NapsterError> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return Err(NapsterError::BadField {
            field,
            value: s.to_owned(),
        });
    }
    s.parse().map_err(|_| NapsterError::BadField {
        field,
        value: s.to_owned(),
    })
}

fn parse_md5(s: &str) -> Result<Md5Digest, NapsterError> {
    if s.len() != 32 {
        return Err(NapsterError::BadField {
            field: "md5",
            value: s.to_owned(),
        });
    }
    s.parse().map_err(|_| NapsterError::BadField {
        field: "md5",
        value: s.to_owned(),
    })
}

fn parse_record(t: &[String]) -> Result<SharedFileRecord, NapsterError> {
    Ok(SharedFileRecord {
        filename: t[0].clone(),
        md5: parse_md5(&t[1])?,
        size_bytes: parse_num(&t[2], "size")?,
        bitrate_kbps: parse_num(&t[3], "bitrate")?,
        frequency_hz: parse_num(&t[4], "frequency")?,
        duration_s: parse_num(&t[5], "time")?,
    })
}

fn parse_result(t: &[String]) -> Result<ResultRecord, NapsterError> {
    Ok(ResultRecord {
        file: parse_record(&t[..6])?,
        nick: t[6].clone(),
        ip: Ipv4Addr::from(parse_num::<u32>(&t[7], "ip")?),
        link_type: check_link(parse_num(&t[8], "link type")?)?,
    })
}
