use std::collections::BTreeMap;

use crate::napster::{ClientConn, ServerState};
use crate::sim::churn::ChurnKind;
use crate::sim::engine::{Core, Driver, Global, SimMessage, Timer};
use crate::sim::scenario::FaultKind;
use crate::sim::topology::NodeRole;
use crate::sim::trace::{Opener, TraceEvent};
use crate::types::{NodeId, SharedFileRecord};
use crate::wire::napster::{LoginInfo, NapsterMessage as M, SearchQuery};

use super::{criteria_for, Workbench};

const DATA_PORT: u16 = 6699;
const MAX_RESULTS: u32 = 100;

fn nick(n: NodeId) -> String {
    format!("user{}", n.0)
}

fn node_of(nick: &str) -> Option<NodeId> {
    nick.strip_prefix("user")?.parse().ok().map(NodeId)
}

#[derive(Debug, Default, Clone)]
struct Client {
    registered: bool,
    logged_in: bool,
    /// Search awaiting results, and whether a download was started for it.
    search: Option<(u32, bool)>,
    /// Download asked of the server: uploader nick and filename.
    asked: Option<(String, String)>,
}

#[derive(Debug, Clone)]
struct Transfer {
    uploader: NodeId,
    downloader: NodeId,
    file: SharedFileRecord,
    opened_by: Opener,
    started: bool,
}

/// Central index servers with their clients.
pub struct NapsterDriver {
    bench: Workbench,
    servers: BTreeMap<NodeId, ServerState>,
    home: Vec<Option<NodeId>>,
    clients: Vec<Client>,
    firewalled: Vec<bool>,
    transfers: Vec<Transfer>,
}

impl NapsterDriver {
    pub fn new(bench: Workbench, firewalled: Vec<bool>) -> Self {
        let n = bench.topology.len();
        let home = (0..n)
            .map(|i| {
                let me = NodeId(i as u32);
                (bench.role(me) != NodeRole::Server)
                    .then(|| bench.neighbors(me).iter().copied().find(|p| bench.role(*p) == NodeRole::Server))
                    .flatten()
            })
            .collect();
        Self {
            bench,
            servers: BTreeMap::new(),
            home,
            clients: vec![Client::default(); n],
            firewalled,
            transfers: Vec::new(),
        }
    }

    fn login(&mut self, core: &mut Core, c: NodeId) {
        let Some(server) = self.home[c.0 as usize] else { return };
        let client = &mut self.clients[c.0 as usize];
        let info = LoginInfo {
            nick: nick(c),
            password: format!("pw{}", c.0),
            port: if self.firewalled[c.0 as usize] { 0 } else { DATA_PORT },
            client_info: "peerlab".into(),
            link_type: if self.bench.is_modem(c) { 4 } else { 8 },
            email: (!client.registered).then(|| format!("{}@example.net", nick(c))),
        };
        let m = if client.registered { M::Login(info) } else { M::NewUserLogin(info) };
        client.registered = true;
        core.send(c, server, SimMessage::Napster(m));
    }

    fn on_server(&mut self, core: &mut Core, server: NodeId, src: NodeId, msg: M) {
        let Some(state) = self.servers.get_mut(&server) else { return };
        let conn = ClientConn(src.0);
        if matches!(msg, M::Login(_) | M::NewUserLogin(_)) {
            state.connect(conn, src.ip());
        }
        if let M::Search(_) = &msg {
            if let Some((query, _)) = self.clients[src.0 as usize].search {
                let online: Vec<NodeId> = state.online_users().filter_map(node_of).collect();
                for node in online.into_iter().filter(|n| *n != src) {
                    core.record(TraceEvent::Examined { query, node });
                }
            }
        }
        let state = self.servers.get_mut(&server).expect("checked");
        for (to, reply) in state.server_handle(conn, msg) {
            core.send(server, NodeId(to.0), SimMessage::Napster(reply));
        }
    }

    fn on_client(&mut self, core: &mut Core, me: NodeId, server: NodeId, msg: M) {
        let downloads = self.bench.scenario.napster.downloads;
        match msg {
            M::LoginAck { .. } => {
                self.clients[me.0 as usize].logged_in = true;
                for f in self.bench.files_of(me) {
                    core.send(me, server, SimMessage::Napster(M::ShareNotify(f)));
                }
            }
            M::SearchResponse(r) => {
                let client = &mut self.clients[me.0 as usize];
                let Some((query, started)) = client.search else { return };
                let Some(responder) = node_of(&r.nick) else { return };
                core.record(TraceEvent::Hit { query, node: me, responder, results: 1 });
                if downloads && !started {
                    client.search = Some((query, true));
                    client.asked = Some((r.nick.clone(), r.file.filename.clone()));
                    let m = M::DownloadRequest { nick: r.nick, filename: r.file.filename };
                    core.send(me, server, SimMessage::Napster(m));
                }
            }
            M::DownloadAck(ack) => {
                let Some(uploader) = node_of(&ack.nick) else { return };
                let file = self.bench.files_of(uploader).into_iter().find(|f| f.filename == ack.filename);
                let Some(file) = file else { return };
                self.begin(core, uploader, me, file, Opener::Downloader);
            }
            M::AltDownloadAck(ack) => {
                // We are the uploader; the downloader cannot accept, so we connect out.
                let Some(downloader) = node_of(&ack.nick) else { return };
                let file = self.bench.files_of(me).into_iter().find(|f| f.filename == ack.filename);
                let Some(file) = file else { return };
                self.begin(core, me, downloader, file, Opener::Uploader);
            }
            M::Error { text } if text.contains("firewalled") => {
                if let Some((nick, filename)) = self.clients[me.0 as usize].asked.clone() {
                    let m = M::AltDownloadRequest { nick, filename };
                    core.send(me, server, SimMessage::Napster(m));
                }
            }
            _ => {}
        }
    }

    /// Opens the data connection; the downloader's timer fires once it is
    /// up and again when the last byte arrives.
    fn begin(&mut self, core: &mut Core, uploader: NodeId, downloader: NodeId, file: SharedFileRecord, opened_by: Opener) {
        let id = self.transfers.len() as u32;
        let at = core.now() + core.latency(uploader, downloader);
        self.transfers.push(Transfer {
            uploader,
            downloader,
            file,
            opened_by,
            started: false,
        });
        core.schedule_timer(at, downloader, Timer::Transfer(id));
    }

    fn on_transfer(&mut self, core: &mut Core, id: u32) {
        let bw = self.bench.scenario.napster.bandwidth_kbps;
        let t = self.transfers[id as usize].clone();
        let Some(server) = self.home[t.downloader.0 as usize] else { return };
        if !core.is_alive(t.uploader) {
            return;
        }
        let (nick, filename) = (nick(t.uploader), t.file.filename.clone());
        if !t.started {
            self.transfers[id as usize].started = true;
            core.send(t.downloader, server, SimMessage::Napster(M::DownloadingFile { nick, filename }));
            let ms = (t.file.size_bytes * 8).div_ceil(bw);
            core.schedule_timer(core.now() + ms, t.downloader, Timer::Transfer(id));
            return;
        }
        core.record(TraceEvent::Transfer {
            uploader: t.uploader,
            downloader: t.downloader,
            opened_by: t.opened_by,
            filename: filename.clone(),
            offset: 0,
            bytes: t.file.size_bytes,
        });
        core.send(t.downloader, server, SimMessage::Napster(M::DownloadComplete { nick, filename }));
    }

    /// Online clients can search and be found. Once their server is gone
    /// they still try, which is the point of killing it.
    fn ready(&self, core: &Core, n: NodeId) -> bool {
        let server_up = self.home[n.0 as usize].is_some_and(|s| core.is_alive(s));
        core.is_alive(n) && (self.clients[n.0 as usize].logged_in || !server_up)
    }

    fn leave(&mut self, core: &mut Core, n: NodeId) {
        if core.leave(n) {
            self.on_leave(core, n);
        }
    }
}

impl Driver for NapsterDriver {
    fn start(&mut self, core: &mut Core) {
        for s in self.bench.topology.with_role(NodeRole::Server) {
            self.servers.insert(s, ServerState::new());
        }
        for c in self.bench.users().to_vec() {
            self.login(core, c);
        }
        self.bench.schedule(core);
    }

    fn on_message(&mut self, core: &mut Core, src: NodeId, dst: NodeId, msg: SimMessage) {
        let SimMessage::Napster(m) = msg else { return };
        if self.servers.contains_key(&dst) {
            self.on_server(core, dst, src, m);
        } else {
            self.on_client(core, dst, src, m);
        }
    }

    fn on_timer(&mut self, core: &mut Core, _node: NodeId, timer: Timer) {
        if let Timer::Transfer(id) = timer {
            self.on_transfer(core, id);
        }
    }

    fn on_global(&mut self, core: &mut Core, event: Global) {
        match event {
            Global::Query(i) => {
                let ready: Vec<bool> = (0..self.clients.len())
                    .map(|n| self.ready(core, NodeId(n as u32)))
                    .collect();
                let Some((origin, file)) = self.bench.pick_query(core, |n| ready[n.0 as usize]) else {
                    return;
                };
                let Some(server) = self.home[origin.0 as usize] else { return };
                let criteria = criteria_for(file);
                self.clients[origin.0 as usize].search = Some((i, false));
                core.record(TraceEvent::QueryIssued { query: i, node: origin, criteria: criteria.clone(), ttl: 1 });
                let q = SearchQuery::by_name(Some(&criteria), None, MAX_RESULTS);
                core.send(origin, server, SimMessage::Napster(M::Search(q)));
            }
            Global::Fault(i) => {
                let f = self.bench.fault(i).clone();
                let victims: Vec<NodeId> = match f.kind {
                    FaultKind::KillCentral => self.servers.keys().copied().collect(),
                    FaultKind::KillRandom => self.bench.random_victims(core, f.fraction),
                    FaultKind::KillNode => f.node.map(NodeId).into_iter().collect(),
                    FaultKind::KillSuper => Vec::new(),
                };
                for v in victims {
                    self.leave(core, v);
                }
            }
            Global::Churn(i) => {
                let join = self.bench.churn(i).kind == ChurnKind::Join;
                let Some(n) = self.bench.churn_target(core, join) else { return };
                if join {
                    if core.join(n) {
                        self.on_join(core, n);
                    }
                } else {
                    self.leave(core, n);
                }
            }
        }
    }

    fn on_leave(&mut self, core: &mut Core, node: NodeId) {
        if self.servers.remove(&node).is_some() {
            for (i, h) in self.home.iter().enumerate() {
                if *h == Some(node) {
                    self.clients[i].logged_in = false;
                }
            }
            return;
        }
        let c = &mut self.clients[node.0 as usize];
        c.logged_in = false;
        c.search = None;
        c.asked = None;
        if let Some(server) = self.home[node.0 as usize] {
            if core.is_alive(server) {
                if let Some(state) = self.servers.get_mut(&server) {
                    state.disconnect(ClientConn(node.0));
                }
            }
        }
    }

    fn on_join(&mut self, core: &mut Core, node: NodeId) {
        if self.bench.role(node) == NodeRole::Server {
            self.servers.insert(node, ServerState::new());
        } else {
            self.login(core, node);
        }
    }
}
