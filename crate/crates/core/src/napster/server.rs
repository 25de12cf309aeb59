use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::Serialize;

use super::search::{match_search, IndexEntry};
use crate::types::SharedFileRecord;
use crate::wire::napster::{
    DownloadAck, LoginInfo, NapsterMessage, ResultRecord, SearchQuery, ANONYMOUS_EMAIL,
};

/// A client's control connection to the index server.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClientConn(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UserEntry {
    pub password: String,
    pub email: Option<String>,
    pub link_type: u8,
    pub data_port: u16,
    pub ip: Ipv4Addr,
    pub online: bool,
}

#[derive(Debug, Clone)]
struct Session {
    ip: Ipv4Addr,
    nick: Option<String>,
}

/// Key of one in-progress transfer: downloader, uploader, filename.
pub type TransferKey = (String, String, String);

/// The central index: registered users, the shares of online users and the
/// transfers clients have reported.
#[derive(Debug, Default)]
pub struct ServerState {
    users: BTreeMap<String, UserEntry>,
    files: BTreeMap<String, Vec<SharedFileRecord>>,
    downloads: BTreeMap<TransferKey, u32>,
    sessions: BTreeMap<ClientConn, Session>,
}

fn error(text: impl Into<String>) -> NapsterMessage {
    NapsterMessage::Error { text: text.into() }
}

impl ServerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// A client opened a control connection from `ip`.
    pub fn connect(&mut self, conn: ClientConn, ip: Ipv4Addr) {
        self.sessions.insert(conn, Session { ip, nick: None });
    }

    /// The control connection closed: the user goes offline and their
    /// shares leave the index. Returns the nick that logged off.
    pub fn disconnect(&mut self, conn: ClientConn) -> Option<String> {
        let nick = self.sessions.remove(&conn)?.nick?;
        if let Some(u) = self.users.get_mut(&nick) {
            u.online = false;
        }
        self.files.remove(&nick);
        self.downloads.retain(|(a, b, _), _| *a != nick && *b != nick);
        Some(nick)
    }

    pub fn user(&self, nick: &str) -> Option<&UserEntry> {
        self.users.get(nick)
    }

    pub fn online_users(&self) -> impl Iterator<Item = &str> {
        self.users
            .iter()
            .filter(|(_, u)| u.online)
            .map(|(n, _)| n.as_str())
    }

    pub fn files_of(&self, nick: &str) -> &[SharedFileRecord] {
        self.files.get(nick).map_or(&[], Vec::as_slice)
    }

    pub fn indexed_files(&self) -> usize {
        self.files.values().map(Vec::len).sum()
    }

    pub fn downloads_in_progress(&self) -> &BTreeMap<TransferKey, u32> {
        &self.downloads
    }

    fn conn_of(&self, nick: &str) -> Option<ClientConn> {
        self.sessions
            .iter()
            .find(|(_, s)| s.nick.as_deref() == Some(nick))
            .map(|(c, _)| *c)
    }

    fn index(&self) -> impl Iterator<Item = IndexEntry<'_>> {
        self.files.iter().flat_map(move |(nick, files)| {
            let link_type = self.users.get(nick).map_or(0, |u| u.link_type);
            files.iter().map(move |file| IndexEntry {
                nick,
                link_type,
                file,
            })
        })
    }

    pub fn search(&self, q: &SearchQuery) -> Vec<ResultRecord> {
        match_search(q, self.index())
            .into_iter()
            .map(|e| ResultRecord {
                file: e.file.clone(),
                nick: e.nick.to_owned(),
                ip: self.users[e.nick].ip,
                link_type: e.link_type,
            })
            .collect()
    }

    fn login(&mut self, conn: ClientConn, info: LoginInfo, new_user: bool) -> NapsterMessage {
        let Some(session) = self.sessions.get(&conn) else {
            return error("not connected");
        };
        if session.nick.is_some() {
            return error("already logged in");
        }
        let ip = session.ip;
        if info.link_type > 10 {
            return error("invalid link type");
        }
        match self.users.get(&info.nick) {
            Some(_) if new_user => return error("nick already registered"),
            Some(u) if u.password != info.password => return error("invalid password"),
            Some(u) if u.online => return error("nick already online"),
            _ => {}
        }
        let entry = self
            .users
            .entry(info.nick.clone())
            .or_insert_with(|| UserEntry {
                password: info.password.clone(),
                email: info.email.clone(),
                link_type: 0,
                data_port: 0,
                ip,
                online: false,
            });
        entry.link_type = info.link_type;
        entry.data_port = info.port;
        entry.ip = ip;
        entry.online = true;
        let email = entry
            .email
            .clone()
            .unwrap_or_else(|| ANONYMOUS_EMAIL.to_owned());
        self.files.entry(info.nick.clone()).or_default();
        self.sessions.get_mut(&conn).expect("checked above").nick = Some(info.nick);
        NapsterMessage::LoginAck { email }
    }

    fn ack_for(&self, nick: &str, filename: &str) -> Result<(DownloadAck, ClientConn), NapsterMessage> {
        let user = self
            .users
            .get(nick)
            .filter(|u| u.online)
            .ok_or_else(|| error(format!("{nick} is not online")))?;
        let file = self
            .files_of(nick)
            .iter()
            .find(|f| f.filename == filename)
            .ok_or_else(|| error(format!("{nick} does not share {filename}")))?;
        let conn = self.conn_of(nick).expect("online users have a session");
        Ok((
            DownloadAck {
                nick: nick.to_owned(),
                ip: user.ip,
                port: user.data_port,
                filename: filename.to_owned(),
                md5: file.md5,
                link_type: user.link_type,
            },
            conn,
        ))
    }

    /// Processes one message from `from`; returns the messages the server
    /// sends and the connections they go to.
    pub fn server_handle(&mut self, from: ClientConn, msg: NapsterMessage) -> Vec<(ClientConn, NapsterMessage)> {
        use NapsterMessage as M;
        let reply = |m| vec![(from, m)];
        match msg {
            M::Login(info) => return reply(self.login(from, info, false)),
            M::NewUserLogin(info) => return reply(self.login(from, info, true)),
            _ => {}
        }
        let Some(me) = self.sessions.get(&from).and_then(|s| s.nick.clone()) else {
            return reply(error("not logged in"));
        };
        match msg {
            M::ShareNotify(file) => {
                self.files.entry(me).or_default().push(file);
                vec![]
            }
            M::Search(q) => self
                .search(&q)
                .into_iter()
                .map(|r| (from, M::SearchResponse(r)))
                .collect(),
            M::Browse { nick } => match self.users.get(&nick).filter(|u| u.online) {
                Some(u) => {
                    let (ip, link_type) = (u.ip, u.link_type);
                    let entries = self
                        .files_of(&nick)
                        .iter()
                        .map(|f| ResultRecord {
                            file: f.clone(),
                            nick: nick.clone(),
                            ip,
                            link_type,
                        })
                        .collect();
                    reply(M::BrowseResponse { entries })
                }
                None => reply(error(format!("{nick} is not online"))),
            },
            M::DownloadRequest { nick, filename } => match self.ack_for(&nick, &filename) {
                Ok((ack, _)) if ack.port == 0 => reply(error(format!(
                    "{nick} is firewalled; use an alternate download request"
                ))),
                Ok((ack, _)) => reply(M::DownloadAck(ack)),
                Err(e) => reply(e),
            },
            M::AltDownloadRequest { nick, filename } => match self.ack_for(&nick, &filename) {
                Ok((ack, _)) if ack.port != 0 => reply(error(format!(
                    "{nick} is not firewalled; use a download request"
                ))),
                Ok((ack, uploader)) => {
                    let d = &self.users[&me];
                    vec![(
                        uploader,
                        M::AltDownloadAck(DownloadAck {
                            nick: me.clone(),
                            ip: d.ip,
                            port: d.data_port,
                            filename: ack.filename,
                            md5: ack.md5,
                            link_type: d.link_type,
                        }),
                    )]
                }
                Err(e) => reply(e),
            },
            M::DownloadingFile { nick, filename } => {
                *self.downloads.entry((me, nick, filename)).or_default() += 1;
                vec![]
            }
            M::DownloadComplete { nick, filename } => {
                let key = (me, nick, filename);
                if let Some(n) = self.downloads.get_mut(&key) {
                    *n -= 1;
                    if *n == 0 {
                        self.downloads.remove(&key);
                    }
                }
                vec![]
            }
            M::Unknown { function, .. } => reply(error(format!("unsupported function {function:#x}"))),
            other => reply(error(format!("unexpected {} from client", other.name()))),
        }
    }
}
