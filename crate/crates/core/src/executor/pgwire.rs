//! Minimal PostgreSQL frontend over the v3 wire protocol: startup, trust or
//! cleartext-password authentication, and the simple query flow.

use std::io::{self, BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::Mutex;
use std::time::Duration;

use url::Url;

use super::{Backend, BackendOutcome, GatewayError};
use crate::engine::value::strict_number;
use crate::engine::{ResultTable, Value};
use crate::model::Dialect;

const PROTOCOL_V3: i32 = 196_608;

struct Conn {
    db: String,
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

pub struct PgWireBackend {
    host: String,
    port: u16,
    user: String,
    password: Option<String>,
    database: Option<String>,
    workers: usize,
    idle: Mutex<Vec<Conn>>,
}

enum Failure {
    Server(String),
    Io(io::Error),
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e)
    }
}

fn put_cstr(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(s.as_bytes());
    buf.push(0);
}

fn read_msg(r: &mut impl Read) -> io::Result<(u8, Vec<u8>)> {
    let mut head = [0u8; 5];
    r.read_exact(&mut head)?;
    let len = i32::from_be_bytes([head[1], head[2], head[3], head[4]]);
    if !(4..=1 << 30).contains(&len) {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "bad message length"));
    }
    let mut body = vec![0u8; len as usize - 4];
    r.read_exact(&mut body)?;
    Ok((head[0], body))
}

fn send(w: &mut impl Write, tag: u8, body: &[u8]) -> io::Result<()> {
    let mut msg = Vec::with_capacity(body.len() + 5);
    msg.push(tag);
    msg.extend_from_slice(&(body.len() as i32 + 4).to_be_bytes());
    msg.extend_from_slice(body);
    w.write_all(&msg)
}

/// Cursor over a message body.
struct Body<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Body<'a> {
    fn take(&mut self, n: usize) -> io::Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "truncated message"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn i16(&mut self) -> io::Result<i16> {
        let s = self.take(2)?;
        Ok(i16::from_be_bytes([s[0], s[1]]))
    }
    fn i32(&mut self) -> io::Result<i32> {
        let s = self.take(4)?;
        Ok(i32::from_be_bytes([s[0], s[1], s[2], s[3]]))
    }
    fn cstr(&mut self) -> io::Result<String> {
        let end = self.b[self.pos..].iter().position(|&c| c == 0).ok_or_else(|| io::Error::new(io::ErrorKind::InvalidData, "unterminated string"))?;
        let s = String::from_utf8_lossy(&self.b[self.pos..self.pos + end]).into_owned();
        self.pos += end + 1;
        Ok(s)
    }
}

/// Renders an ErrorResponse the way psql prints it.
fn error_text(body: &[u8]) -> String {
    let mut b = Body { b: body, pos: 0 };
    let (mut sev, mut msg, mut code) = (String::from("ERROR"), String::new(), String::new());
    while let Ok(t) = b.take(1) {
        if t[0] == 0 {
            break;
        }
        let Ok(v) = b.cstr() else { break };
        match t[0] {
            b'S' => sev = v,
            b'M' => msg = v,
            b'C' => code = v,
            _ => {}
        }
    }
    if code.is_empty() {
        format!("{}:  {}", sev, msg)
    } else {
        format!("{}:  {} (SQLSTATE {})", sev, msg, code)
    }
}

fn decode(oid: i32, raw: &str) -> Value {
    match oid {
        // int2, int4, int8, float4, float8, numeric
        20 | 21 | 23 | 700 | 701 | 1700 => strict_number(raw).unwrap_or_else(|| Value::Text(raw.to_string())),
        _ => Value::Text(raw.to_string()),
    }
}

impl PgWireBackend {
    pub fn new(dsn: &str, password: Option<String>, workers: usize) -> Result<Self, GatewayError> {
        let url = Url::parse(dsn).map_err(|e| GatewayError::Backend(format!("bad dsn '{}': {}", dsn, e)))?;
        if !matches!(url.scheme(), "postgres" | "postgresql") {
            return Err(GatewayError::Backend(format!("dsn scheme must be postgres://, got {}", url.scheme())));
        }
        let host = url.host_str().unwrap_or("localhost").to_string();
        let user = if url.username().is_empty() { "postgres".to_string() } else { url.username().to_string() };
        let password = password.or_else(|| url.password().map(str::to_string));
        let database = Some(url.path().trim_start_matches('/').to_string()).filter(|d| !d.is_empty());
        Ok(PgWireBackend { host, port: url.port().unwrap_or(5432), user, password, database, workers: workers.max(1), idle: Mutex::new(Vec::new()) })
    }

    fn database_for(&self, db_ref: &str) -> String {
        match &self.database {
            Some(d) => d.replace("{db}", db_ref),
            None if db_ref.is_empty() => self.user.clone(),
            None => db_ref.to_string(),
        }
    }

    fn connect(&self, db: &str, timeout: Duration) -> Result<Conn, Failure> {
        let stream = TcpStream::connect((self.host.as_str(), self.port))?;
        stream.set_read_timeout(Some(timeout.max(Duration::from_millis(1))))?;
        let mut writer = stream.try_clone()?;
        let mut reader = BufReader::new(stream);
        let mut body = Vec::new();
        body.extend_from_slice(&PROTOCOL_V3.to_be_bytes());
        put_cstr(&mut body, "user");
        put_cstr(&mut body, &self.user);
        put_cstr(&mut body, "database");
        put_cstr(&mut body, db);
        body.push(0);
        let mut msg = (body.len() as i32 + 4).to_be_bytes().to_vec();
        msg.extend_from_slice(&body);
        writer.write_all(&msg)?;
        loop {
            let (tag, body) = read_msg(&mut reader)?;
            match tag {
                b'R' => {
                    let code = Body { b: &body, pos: 0 }.i32()?;
                    match code {
                        0 => {}
                        3 => {
                            let pw = self
                                .password
                                .as_deref()
                                .ok_or_else(|| Failure::Server("server requested a password but none is configured".into()))?;
                            let mut p = Vec::new();
                            put_cstr(&mut p, pw);
                            send(&mut writer, b'p', &p)?;
                        }
                        other => return Err(Failure::Server(format!("unsupported authentication method (code {})", other))),
                    }
                }
                b'E' => return Err(Failure::Server(error_text(&body))),
                b'Z' => return Ok(Conn { db: db.to_string(), reader, writer }),
                _ => {}
            }
        }
    }

    fn simple_query(conn: &mut Conn, sql: &str) -> Result<Result<ResultTable, String>, Failure> {
        let mut q = Vec::new();
        put_cstr(&mut q, sql);
        send(&mut conn.writer, b'Q', &q)?;
        let mut table = ResultTable::default();
        let mut oids = Vec::new();
        let mut error = None;
        loop {
            let (tag, body) = read_msg(&mut conn.reader)?;
            let mut b = Body { b: &body, pos: 0 };
            match tag {
                b'T' => {
                    let n = b.i16()?;
                    table.columns.clear();
                    oids.clear();
                    for _ in 0..n {
                        table.columns.push(b.cstr()?);
                        b.take(6)?;
                        oids.push(b.i32()?);
                        b.take(8)?;
                    }
                }
                b'D' => {
                    let n = b.i16()?;
                    let mut row = Vec::with_capacity(n as usize);
                    for i in 0..n as usize {
                        let len = b.i32()?;
                        if len < 0 {
                            row.push(Value::Null);
                        } else {
                            let raw = String::from_utf8_lossy(b.take(len as usize)?).into_owned();
                            row.push(decode(oids.get(i).copied().unwrap_or(25), &raw));
                        }
                    }
                    table.rows.push(row);
                }
                b'E' => error = Some(error_text(&body)),
                b'Z' => break,
                _ => {}
            }
        }
        Ok(match error {
            Some(e) => Err(e),
            None => Ok(table),
        })
    }
}

impl Backend for PgWireBackend {
    fn name(&self) -> &str {
        "wire-postgres"
    }

    fn dialect(&self) -> Dialect {
        Dialect::Postgres
    }

    fn max_workers(&self) -> usize {
        self.workers
    }

    fn prepare(&self, _db_ref: &str) -> Result<Duration, GatewayError> {
        Ok(Duration::ZERO)
    }

    fn execute(&self, sql: &str, db_ref: &str, timeout: Duration) -> BackendOutcome {
        let db = self.database_for(db_ref);
        let pooled = {
            let mut idle = self.idle.lock().unwrap();
            idle.iter().position(|c| c.db == db).map(|i| idle.swap_remove(i))
        };
        let conn = match pooled {
            Some(c) => c.reader.get_ref().set_read_timeout(Some(timeout.max(Duration::from_millis(1)))).map(|_| c).map_err(Failure::Io),
            None => self.connect(&db, timeout),
        };
        let mut conn = match conn {
            Ok(c) => c,
            Err(Failure::Server(m)) => return BackendOutcome::Failed { raw: m, class: None },
            Err(Failure::Io(e)) if is_timeout(&e) => return BackendOutcome::TimedOut,
            Err(Failure::Io(e)) => return BackendOutcome::Failed { raw: format!("connection failed: {}", e), class: None },
        };
        match Self::simple_query(&mut conn, sql) {
            Ok(r) => {
                self.idle.lock().unwrap().push(conn);
                match r {
                    Ok(t) => BackendOutcome::Rows(t),
                    Err(m) => BackendOutcome::Failed { raw: m, class: None },
                }
            }
            // the connection is in an unknown state; drop it
            Err(Failure::Io(e)) if is_timeout(&e) => BackendOutcome::TimedOut,
            Err(Failure::Io(e)) => BackendOutcome::Failed { raw: format!("connection lost: {}", e), class: None },
            Err(Failure::Server(m)) => BackendOutcome::Failed { raw: m, class: None },
        }
    }

    fn enforces_timeout(&self) -> bool {
        true
    }

    fn probe(&self) -> Result<(), String> {
        match self.execute("SELECT 1", "", Duration::from_secs(5)) {
            BackendOutcome::Rows(_) => Ok(()),
            BackendOutcome::Failed { raw, .. } => Err(raw),
            BackendOutcome::TimedOut => Err("probe timed out".into()),
        }
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
}
