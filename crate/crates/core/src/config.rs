//! Line-oriented `key = value` documents with `[section]` headers.
//!
//! Sections may repeat (one per primitive, camera, ...). Keys before the
//! first header belong to the root section. `#` starts a comment. A JSON
//! object is accepted as an alternative encoding: scalar and array members
//! become root keys, object members become sections and arrays of objects
//! become repeated sections.

use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDoc {
    pub path: String,
    pub root: Section,
    pub sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        if text.trim_start().starts_with('{') {
            return Self::parse_json(text, path);
        }
        let mut doc = ConfigDoc {
            path: path.to_string(),
            ..Default::default()
        };
        let mut current: Option<Section> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or_else(|| Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("unterminated section header `{content}`"),
                })?;
                let name = name.trim();
                if name.is_empty() {
                    return Err(Error::Parse {
                        path: path.to_string(),
                        line,
                        msg: "empty section name".into(),
                    });
                }
                if let Some(s) = current.take() {
                    doc.sections.push(s);
                }
                current = Some(Section {
                    name: name.to_string(),
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (k, v) = content.split_once('=').ok_or_else(|| Error::Parse {
                path: path.to_string(),
                line,
                msg: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: "empty key".into(),
                });
            }
            let target = current.as_mut().unwrap_or(&mut doc.root);
            if target.entries.iter().any(|e| e.key == key) {
                return Err(Error::Parse {
                    path: path.to_string(),
                    line,
                    msg: format!("duplicate key `{key}`"),
                });
            }
            target.entries.push(Entry {
                key: key.to_string(),
                value: v.trim().trim_matches('"').to_string(),
                line,
            });
        }
        if let Some(s) = current.take() {
            doc.sections.push(s);
        }
        Ok(doc)
    }

    fn parse_json(text: &str, path: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_string(),
            line: e.line(),
            msg: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 1,
            msg: "top-level JSON value must be an object".into(),
        })?;
        let mut doc = ConfigDoc {
            path: path.to_string(),
            ..Default::default()
        };
        for (k, v) in obj {
            match v {
                Value::Object(m) => doc.sections.push(json_section(k, m, path)?),
                Value::Array(items) if items.iter().all(|i| i.is_object()) && !items.is_empty() => {
                    for item in items {
                        doc.sections
                            .push(json_section(k, item.as_object().unwrap(), path)?);
                    }
                }
                other => doc.root.entries.push(Entry {
                    key: k.clone(),
                    value: json_scalar(other, path)?,
                    line: 0,
                }),
            }
        }
        Ok(doc)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn sections_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Section> + 'a {
        self.sections.iter().filter(move |s| s.name == name)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn error(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.clone(),
            line,
            msg: msg.into(),
        }
    }
}

fn json_scalar(v: &Value, path: &str) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        Value::Array(items) => {
            let parts: Result<Vec<String>> = items.iter().map(|i| json_scalar(i, path)).collect();
            Ok(parts?.join(" "))
        }
        Value::Null | Value::Object(_) => Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            msg: format!("unsupported JSON value {v}"),
        }),
    }
}

fn json_section(name: &str, m: &serde_json::Map<String, Value>, path: &str) -> Result<Section> {
    let mut entries = Vec::new();
    for (k, v) in m {
        entries.push(Entry {
            key: k.clone(),
            value: json_scalar(v, path)?,
            line: 0,
        });
    }
    Ok(Section {
        name: name.to_string(),
        line: 0,
        entries,
    })
}

/// Typed accessors that report the offending line on failure.
pub struct SectionReader<'a> {
    pub section: &'a Section,
    pub path: &'a str,
}

impl<'a> SectionReader<'a> {
    pub fn new(doc: &'a ConfigDoc, section: &'a Section) -> Self {
        SectionReader {
            section,
            path: &doc.path,
        }
    }

    pub fn entry(&self, key: &str) -> Option<&'a Entry> {
        self.section.entries.iter().find(|e| e.key == key)
    }

    pub fn has(&self, key: &str) -> bool {
        self.entry(key).is_some()
    }

    fn err(&self, line: usize, msg: String) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            line,
            msg,
        }
    }

    pub fn str(&self, key: &str) -> Result<&'a str> {
        self.entry(key).map(|e| e.value.as_str()).ok_or_else(|| {
            let where_ = if self.section.name.is_empty() {
                "top level".to_string()
            } else {
                format!("section [{}]", self.section.name)
            };
            self.err(self.section.line, format!("missing key `{key}` in {where_}"))
        })
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        let e = self.entry(key);
        let v = self.str(key)?;
        v.parse::<T>().map_err(|err| {
            self.err(
                e.map(|e| e.line).unwrap_or(0),
                format!("bad value for `{key}`: {err}"),
            )
        })
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        if self.has(key) {
            self.parse(key)
        } else {
            Ok(default)
        }
    }

    pub fn floats(&self, key: &str) -> Result<Vec<f64>> {
        let e = self.entry(key);
        let line = e.map(|e| e.line).unwrap_or(0);
        self.str(key)?
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|err| self.err(line, format!("bad number `{s}` in `{key}`: {err}")))
            })
            .collect()
    }

    pub fn floats_n<const N: usize>(&self, key: &str) -> Result<[f64; N]> {
        let v = self.floats(key)?;
        let line = self.entry(key).map(|e| e.line).unwrap_or(0);
        v.as_slice()
            .try_into()
            .map_err(|_| self.err(line, format!("`{key}` needs {N} numbers, got {}", v.len())))
    }

    pub fn usizes(&self, key: &str) -> Result<Vec<usize>> {
        let line = self.entry(key).map(|e| e.line).unwrap_or(0);
        self.str(key)?
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|err| self.err(line, format!("bad integer `{s}` in `{key}`: {err}")))
            })
            .collect()
    }

    /// Reject keys outside `known`.
    pub fn only(&self, known: &[&str]) -> Result<()> {
        for e in &self.section.entries {
            if !known.contains(&e.key.as_str()) {
                return Err(self.err(e.line, format!("unknown key `{}`", e.key)));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TEXT: &str = "\
seed = 3   # comment
[item]
a = 1 2 3
[item]
a = 4
";

    #[test]
    fn sections_repeat() {
        let doc = ConfigDoc::parse(TEXT, "t").unwrap();
        assert_eq!(doc.root.entries[0].value, "3");
        assert_eq!(doc.sections_named("item").count(), 2);
        let r = SectionReader::new(&doc, &doc.sections[0]);
        assert_eq!(r.floats("a").unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(r.floats_n::<3>("a").unwrap(), [1.0, 2.0, 3.0]);
        assert!(r.floats_n::<2>("a").is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        match ConfigDoc::parse("a = 1\nnot a pair\n", "f.cfg") {
            Err(Error::Parse { line, path, .. }) => {
                assert_eq!(line, 2);
                assert_eq!(path, "f.cfg");
            }
            other => panic!("{other:?}"),
        }
        let doc = ConfigDoc::parse("x = 1\n[s]\nv = abc\n", "f").unwrap();
        let r = SectionReader::new(&doc, &doc.sections[0]);
        match r.parse::<f64>("v") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(ConfigDoc::parse("[s\n", "f").is_err());
        assert!(ConfigDoc::parse("a = 1\na = 2\n", "f").is_err());
    }

    #[test]
    fn json_matches_text() {
        let json = r#"{"seed": 3, "item": [{"a": [1, 2, 3]}, {"a": 4}]}"#;
        let doc = ConfigDoc::parse(json, "j").unwrap();
        assert_eq!(doc.root.entries[0].value, "3");
        let items: Vec<_> = doc.sections_named("item").collect();
        assert_eq!(items.len(), 2);
        assert_eq!(items[0].entries[0].value, "1 2 3");
    }
}
