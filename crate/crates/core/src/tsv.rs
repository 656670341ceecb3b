//! Tab-separated tables with a header row and `# key=value` footer lines.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub const MISSING: &str = "NA";

pub fn escape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    for c in field.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(field: &str) -> String {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => out.push(other),
            None => out.push('\\'),
        }
    }
    out
}

/// Shortest round-trip text for a float; `NA` for NaN.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        MISSING.to_string()
    } else {
        format!("{v:?}")
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), fmt_f64)
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub footer: Vec<(String, String)>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Table {
        Table {
            columns: columns.into_iter().map(Into::into).collect(),
            ..Table::default()
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn footer(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.footer.push((key.into(), value.into()));
    }

    pub fn footer_value(&self, key: &str) -> Option<&str> {
        self.footer.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join("\t"));
        out.push('\n');
        for row in &self.rows {
            let escaped: Vec<String> = row.iter().map(|f| escape(f)).collect();
            out.push_str(&escaped.join("\t"));
            out.push('\n');
        }
        for (k, v) in &self.footer {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }

    pub fn parse(text: &str, origin: &str) -> Result<Table> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut table = Table::default();
        for (_, line) in lines.by_ref() {
            if let Some(kv) = line.strip_prefix('#') {
                push_footer(&mut table, kv);
                continue;
            }
            table.columns = line.split('\t').map(str::to_string).collect();
            break;
        }
        if table.columns.is_empty() {
            return Err(Error::format(origin, 1, "missing header row"));
        }
        for (i, line) in lines {
            if let Some(kv) = line.strip_prefix('#') {
                push_footer(&mut table, kv);
                continue;
            }
            let row: Vec<String> = line.split('\t').map(unescape).collect();
            if row.len() != table.columns.len() {
                return Err(Error::format(
                    origin,
                    i + 1,
                    format!("expected {} fields, found {}", table.columns.len(), row.len()),
                ));
            }
            table.rows.push(row);
        }
        Ok(table)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Table> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Table::parse(&text, &path.display().to_string())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path, self.render())
    }
}

fn push_footer(table: &mut Table, kv: &str) {
    let kv = kv.trim();
    if let Some((k, v)) = kv.split_once('=') {
        table.footer.push((k.trim().to_string(), v.trim().to_string()));
    }
}

pub fn write_file(path: impl AsRef<Path>, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn parse_f64(field: &str, origin: &str, line: usize) -> Result<f64> {
    if field == MISSING {
        return Ok(f64::NAN);
    }
    field
        .parse()
        .map_err(|_| Error::format(origin, line, format!("not a number: {field:?}")))
}
