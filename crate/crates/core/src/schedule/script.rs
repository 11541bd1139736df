//! Line-oriented schedule scripts, one primitive per line:
//!
//! ```text
//! cache_read A shared A_shared      # optional buffer name
//! cache_read A_shared register at ki
//! tile C ko=8 ki=16
//! pipeline A_shared 3
//! inline A_pre
//! ```

use thiserror::Error;

use super::Primitive;
use crate::ir::Scope;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {msg}")]
pub struct ScriptError {
    pub line: usize,
    pub msg: String,
}

pub fn parse_script(text: &str) -> Result<Vec<Primitive>, ScriptError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let words: Vec<&str> = raw.split('#').next().unwrap_or("").split_whitespace().collect();
        if words.is_empty() {
            continue;
        }
        let err = |msg: String| ScriptError { line: i + 1, msg };
        let prim = match words.as_slice() {
            ["cache_read", tensor, scope, rest @ ..] => {
                let scope = Scope::from_keyword(scope)
                    .ok_or_else(|| err(format!("unknown scope `{scope}`")))?;
                let (name, at) = match rest {
                    [] => (None, None),
                    [name] => (Some(name.to_string()), None),
                    ["at", var] => (None, Some(var.to_string())),
                    [name, "at", var] => (Some(name.to_string()), Some(var.to_string())),
                    _ => return Err(err("usage: cache_read TENSOR SCOPE [NAME] [at LOOP]".into())),
                };
                Primitive::CacheRead { tensor: tensor.to_string(), scope, name, at }
            }
            ["tile", tensor, parts @ ..] if !parts.is_empty() => {
                let parts = parts
                    .iter()
                    .map(|p| {
                        let (n, e) = p.split_once('=').ok_or_else(|| err(format!("expected NAME=EXTENT, got `{p}`")))?;
                        let e = e.parse::<i64>().map_err(|_| err(format!("bad extent in `{p}`")))?;
                        Ok((n.to_string(), e))
                    })
                    .collect::<Result<Vec<_>, ScriptError>>()?;
                Primitive::Tile { tensor: tensor.to_string(), parts }
            }
            ["pipeline", buffer, stages] => Primitive::Pipeline {
                buffer: buffer.to_string(),
                stages: stages.parse().map_err(|_| err(format!("bad stage count `{stages}`")))?,
            },
            ["inline", tensor] => Primitive::Inline { tensor: tensor.to_string() },
            _ => return Err(err(format!("unrecognized primitive `{}`", raw.trim()))),
        };
        out.push(prim);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_every_form() {
        let p = parse_script("cache_read A shared\n\n# note\ncache_read A_buf register R at ki\ntile C ko=8 ki=16\npipeline A_buf 3\ninline S2\n").unwrap();
        assert_eq!(p.len(), 5);
        assert_eq!(
            p[1],
            Primitive::CacheRead {
                tensor: "A_buf".into(),
                scope: Scope::Register,
                name: Some("R".into()),
                at: Some("ki".into())
            }
        );
        assert_eq!(p[2], Primitive::Tile { tensor: "C".into(), parts: vec![("ko".into(), 8), ("ki".into(), 16)] });
    }

    #[test]
    fn reports_line_numbers() {
        let e = parse_script("tile C ko=8\npipeline A x").unwrap_err();
        assert_eq!(e.line, 2);
        assert!(parse_script("fuse A B").is_err());
        assert!(parse_script("tile C ko").is_err());
    }
}
