//! Flat `key=value` text used for config files and checkpoint headers.
//!
//! One pair per line; blank lines and lines starting with `#` are ignored;
//! whitespace around keys and values is trimmed.

use crate::error::{Error, Result};

pub fn parse(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", no + 1)))?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", no + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn render(pairs: &[(String, String)]) -> String {
    pairs.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected a boolean, got {v:?}"))),
    }
}

pub fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

pub fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| parse_num(key, p.trim())).collect()
}

/// `HxW` (or a single `N` meaning `NxN`).
pub fn parse_hw(key: &str, v: &str) -> Result<(usize, usize)> {
    match v.split_once(['x', 'X']) {
        Some((h, w)) => Ok((parse_num(key, h.trim())?, parse_num(key, w.trim())?)),
        None => {
            let n = parse_num(key, v)?;
            Ok((n, n))
        }
    }
}

pub fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let p = parse("# c\n a = 1 \n\nb=x,y\n").unwrap();
        assert_eq!(p, vec![("a".into(), "1".into()), ("b".into(), "x,y".into())]);
        assert_eq!(render(&p), "a=1\nb=x,y\n");
        assert!(parse("novalue\n").is_err());
    }

    #[test]
    fn value_helpers() {
        assert_eq!(parse_hw("input", "240x224").unwrap(), (240, 224));
        assert_eq!(parse_hw("input", "32").unwrap(), (32, 32));
        assert_eq!(parse_list::<usize>("d", "5, 5,5,4").unwrap(), vec![5, 5, 5, 4]);
        assert!(parse_bool("x", "maybe").is_err());
    }
}
