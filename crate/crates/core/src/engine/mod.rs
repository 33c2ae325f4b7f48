//! Embedded dialect-aware SQL engine: lexer, parser, printer, executor.

pub mod ast;
pub mod conformance;
pub mod db;
pub mod error;
pub mod exec;
pub mod lexer;
pub mod mode;
pub mod parser;
pub mod printer;
pub mod value;

pub use conformance::{check_conformance, load_corpus, run_case, CaseOutcome, ConformanceCase};
pub use db::{load_database, parse_database, InMemoryDb, LoadError};
pub use error::{EngineError, EngineErrorClass, EngineResult};
pub use exec::{execute, execute_with, run_sql, ExecOptions, ResultTable};
pub use mode::DialectMode;
pub use parser::{parse_collecting, parse_sql, Violation};
pub use printer::{print_expr, print_query};
pub use value::{ColumnType, Value};
