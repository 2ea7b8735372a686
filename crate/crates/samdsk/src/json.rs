//! Canonical JSON output and a field-path-aware reader.

use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{IoError, Result};

/// Pretty-printed with sorted keys and a trailing newline.
pub fn canonical(v: &Value) -> String {
    // serde_json's default map is ordered by key
    let mut s = serde_json::to_string_pretty(v).expect("values always serialize");
    s.push('\n');
    s
}

pub fn parse(text: &str) -> Result<Value> {
    Ok(serde_json::from_str(text)?)
}

/// Writes through a temporary file in the same directory and renames it over
/// `path`, so readers never see a partial document.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| IoError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| IoError::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| IoError::io(path, e))?;
    tmp.persist(path).map_err(|e| IoError::io(path, e.error))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

/// Which document a [`Field`] belongs to; selects the error variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Proposal,
    Manifest,
    Annotation,
    State,
    History,
}

impl Kind {
    fn name(self) -> &'static str {
        match self {
            Kind::Proposal => "proposal",
            Kind::Manifest => "manifest",
            Kind::Annotation => "annotation",
            Kind::State => "state",
            Kind::History => "history",
        }
    }
}

/// A JSON value together with its path from the document root.
#[derive(Debug, Clone, Copy)]
pub struct Field<'a> {
    pub value: &'a Value,
    kind: Kind,
    path: &'a str,
    /// Proposal id used to annotate proposal-file errors.
    tag: Option<&'a str>,
}

pub fn root(value: &Value, kind: Kind) -> Field<'_> {
    Field {
        value,
        kind,
        path: "$",
        tag: None,
    }
}

/// Owned path storage so fields can borrow it.
pub struct Owned {
    path: String,
}

impl<'a> Field<'a> {
    pub fn error(&self, reason: impl Into<String>) -> IoError {
        error_at(self.kind, self.path, self.tag, reason.into())
    }

    pub fn path(&self) -> &str {
        self.path
    }

    pub fn with_tag(self, tag: &'a str) -> Self {
        Self {
            tag: Some(tag),
            ..self
        }
    }

    pub fn object(&self) -> Result<&'a Map<String, Value>> {
        self.value
            .as_object()
            .ok_or_else(|| self.error(format!("expected an object, found {}", type_name(self.value))))
    }

    /// Rejects keys outside `allowed`.
    pub fn only_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.object()?.keys() {
            if !allowed.contains(&k.as_str()) {
                return Err(self.error(format!("unexpected key {k:?}")));
            }
        }
        Ok(())
    }

    pub fn child_path(&self, key: &str) -> Owned {
        Owned {
            path: format!("{}.{key}", self.path),
        }
    }

    pub fn index_path(&self, i: usize) -> Owned {
        Owned {
            path: format!("{}[{i}]", self.path),
        }
    }

    pub fn at<'b>(&self, value: &'b Value, owned: &'b Owned) -> Field<'b>
    where
        'a: 'b,
    {
        Field {
            value,
            kind: self.kind,
            path: &owned.path,
            tag: self.tag,
        }
    }

    pub fn str(&self) -> Result<&'a str> {
        self.value
            .as_str()
            .ok_or_else(|| self.error(format!("expected a string, found {}", type_name(self.value))))
    }

    pub fn u64(&self) -> Result<u64> {
        self.value.as_u64().ok_or_else(|| {
            self.error(format!("expected a non-negative integer, found {}", self.value))
        })
    }

    pub fn usize(&self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| self.error("integer too large"))
    }

    pub fn f64(&self) -> Result<f64> {
        self.value
            .as_f64()
            .ok_or_else(|| self.error(format!("expected a number, found {}", type_name(self.value))))
    }

    pub fn bool(&self) -> Result<bool> {
        self.value
            .as_bool()
            .ok_or_else(|| self.error(format!("expected a boolean, found {}", type_name(self.value))))
    }

    pub fn array(&self) -> Result<&'a [Value]> {
        self.value
            .as_array()
            .map(Vec::as_slice)
            .ok_or_else(|| self.error(format!("expected an array, found {}", type_name(self.value))))
    }
}

pub fn error_at(kind: Kind, path: &str, tag: Option<&str>, reason: String) -> IoError {
    match kind {
        Kind::Proposal => IoError::MalformedProposal {
            field: path.to_string(),
            id: tag.map(str::to_string),
            reason,
        },
        Kind::Manifest => IoError::MalformedManifest {
            field: path.to_string(),
            reason,
        },
        other => IoError::MalformedDocument {
            kind: other.name(),
            field: path.to_string(),
            reason,
        },
    }
}

fn type_name(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "a boolean",
        Value::Number(_) => "a number",
        Value::String(_) => "a string",
        Value::Array(_) => "an array",
        Value::Object(_) => "an object",
    }
}

/// Reads a required key.
pub fn required<'a, T>(
    f: &Field<'a>,
    key: &str,
    read: impl FnOnce(Field<'_>) -> Result<T>,
) -> Result<T> {
    let obj = f.object()?;
    let owned = f.child_path(key);
    match obj.get(key) {
        Some(v) => read(f.at(v, &owned)),
        None => Err(error_at(f.kind, &owned.path, f.tag, "missing required key".into())),
    }
}

/// Reads an optional key; JSON `null` counts as absent.
pub fn optional<'a, T>(
    f: &Field<'a>,
    key: &str,
    read: impl FnOnce(Field<'_>) -> Result<T>,
) -> Result<Option<T>> {
    let obj = f.object()?;
    let owned = f.child_path(key);
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => read(f.at(v, &owned)).map(Some),
    }
}

/// Reads every element of an array field.
pub fn each<T>(f: &Field<'_>, mut read: impl FnMut(usize, Field<'_>) -> Result<T>) -> Result<Vec<T>> {
    let items = f.array()?;
    let mut out = Vec::with_capacity(items.len());
    for (i, v) in items.iter().enumerate() {
        let owned = f.index_path(i);
        out.push(read(i, f.at(v, &owned))?);
    }
    Ok(out)
}

/// `[h, w]` with both positive.
pub fn dims(f: Field<'_>) -> Result<(usize, usize)> {
    let d = each(&f, |_, x| x.usize())?;
    match d.as_slice() {
        &[h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(f.error("expected [height, width] with both positive")),
    }
}

pub fn dims_value(d: (usize, usize)) -> Value {
    Value::from(vec![d.0, d.1])
}
