use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::time::Duration;

use wait_timeout::ChildExt;

use super::{Backend, BackendOutcome, GatewayError};
use crate::engine::value::strict_number;
use crate::engine::{ResultTable, Value};
use crate::model::Dialect;

/// Runs statements through a database's command-line client.
///
/// The command line is split on whitespace; `{db}` and `{sql}` are replaced
/// inside each argument. Without `{sql}` the statement goes to stdin. The
/// client must print rows as tab-separated lines without a header
/// (`mysql -B -N`, `psql -A -t -F '\t'`, `sqlite3 -separator '\t'`).
pub struct SubprocessBackend {
    name: String,
    dialect: Dialect,
    argv: Vec<String>,
    workers: usize,
}

impl SubprocessBackend {
    pub fn new(dialect: Dialect, command: &str, workers: usize) -> Result<Self, GatewayError> {
        let argv: Vec<String> = command.split_whitespace().map(str::to_string).collect();
        if argv.is_empty() {
            return Err(GatewayError::Backend("empty subprocess command".into()));
        }
        Ok(SubprocessBackend { name: format!("subprocess-{}", argv[0]), dialect, argv, workers })
    }

    fn command(&self, sql: &str, db: &str) -> (Command, bool) {
        let mut uses_sql = false;
        let args: Vec<String> = self
            .argv
            .iter()
            .map(|a| {
                uses_sql |= a.contains("{sql}");
                a.replace("{db}", db).replace("{sql}", sql)
            })
            .collect();
        let mut c = Command::new(&args[0]);
        c.args(&args[1..]).stdin(Stdio::piped()).stdout(Stdio::piped()).stderr(Stdio::piped());
        (c, !uses_sql)
    }
}

fn parse_cell(s: &str) -> Value {
    if s == "NULL" || s == "\\N" {
        return Value::Null;
    }
    strict_number(s).unwrap_or_else(|| Value::Text(s.to_string()))
}

pub(crate) fn parse_tsv(out: &str) -> ResultTable {
    let rows = out.lines().filter(|l| !l.is_empty()).map(|l| l.split('\t').map(parse_cell).collect()).collect();
    ResultTable { columns: Vec::new(), rows }
}

impl Backend for SubprocessBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn dialect(&self) -> Dialect {
        self.dialect
    }

    fn max_workers(&self) -> usize {
        self.workers
    }

    fn prepare(&self, _db_ref: &str) -> Result<Duration, GatewayError> {
        Ok(Duration::ZERO)
    }

    fn execute(&self, sql: &str, db_ref: &str, timeout: Duration) -> BackendOutcome {
        let (mut cmd, via_stdin) = self.command(sql, db_ref);
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(e) => return BackendOutcome::Failed { raw: format!("cannot start {}: {}", self.argv[0], e), class: None },
        };
        if let Some(mut stdin) = child.stdin.take() {
            if via_stdin {
                let _ = stdin.write_all(sql.as_bytes());
                let _ = stdin.write_all(b";\n");
            }
        }
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let out_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stdout.read_to_string(&mut s);
            s
        });
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let status = match child.wait_timeout(timeout) {
            Ok(Some(s)) => s,
            Ok(None) => {
                let _ = child.kill();
                let _ = child.wait();
                return BackendOutcome::TimedOut;
            }
            Err(e) => return BackendOutcome::Failed { raw: e.to_string(), class: None },
        };
        let out = out_reader.join().unwrap_or_default();
        let err = err_reader.join().unwrap_or_default();
        if status.success() && err.trim().is_empty() {
            BackendOutcome::Rows(parse_tsv(&out))
        } else {
            let raw = if err.trim().is_empty() { format!("client exited with {}", status) } else { err.trim().to_string() };
            BackendOutcome::Failed { raw, class: None }
        }
    }

    fn probe(&self) -> Result<(), String> {
        match self.execute("SELECT 1", "", Duration::from_secs(5)) {
            BackendOutcome::Rows(_) => Ok(()),
            BackendOutcome::Failed { raw, .. } => Err(raw),
            BackendOutcome::TimedOut => Err("probe timed out".into()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_cells() {
        let t = parse_tsv("1\tabc\tNULL\n2.5\t\t\\N\n");
        assert_eq!(t.rows[0], vec![Value::Int(1), Value::Text("abc".into()), Value::Null]);
        assert_eq!(t.rows[1], vec![Value::Float(2.5), Value::Text(String::new()), Value::Null]);
    }

    #[cfg(unix)]
    #[test]
    fn runs_a_client_and_captures_errors() {
        let b = SubprocessBackend::new(Dialect::Sqlite, "sh -c {sql}", 1).unwrap();
        match b.execute("printf '1\\tx\\n'", "", Duration::from_secs(5)) {
            BackendOutcome::Rows(t) => assert_eq!(t.rows, vec![vec![Value::Int(1), Value::Text("x".into())]]),
            o => panic!("{:?}", o),
        }
        match b.execute("echo 'no such table: t' >&2; exit 1", "", Duration::from_secs(5)) {
            BackendOutcome::Failed { raw, .. } => assert_eq!(raw, "no such table: t"),
            o => panic!("{:?}", o),
        }
        assert_eq!(b.execute("sleep 2", "", Duration::from_millis(50)), BackendOutcome::TimedOut);
    }
}
