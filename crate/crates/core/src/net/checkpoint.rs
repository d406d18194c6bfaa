//! Plain-text parameter checkpoints.
//!
//! ```text
//! fbsdej-params v1
//! seed 42
//! d 1
//! steps 20
//! sharing per_step
//! activation relu
//! hidden 11,11
//! count 3701
//! <value>
//! ...
//! ```
//!
//! Values are written one per line in shortest round-trip form, so a
//! save/load cycle is bit-exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::net::params::{NetConfig, ParamLayout, ParamSet, Sharing, Y0Init};
use crate::net::tape::Activation;

pub const MAGIC: &str = "fbsdej-params v1";

pub fn to_string(params: &ParamSet, seed: u64) -> String {
    let l = &params.layout;
    let hidden: Vec<String> = l.hidden.iter().map(|h| h.to_string()).collect();
    let mut s = String::with_capacity(params.len() * 24 + 128);
    s.push_str(MAGIC);
    s.push('\n');
    s.push_str(&format!("seed {seed}\n"));
    s.push_str(&format!("d {}\n", l.d));
    s.push_str(&format!("steps {}\n", l.steps));
    s.push_str(&format!("sharing {}\n", l.sharing.as_str()));
    s.push_str(&format!("activation {}\n", l.activation.as_str()));
    s.push_str(&format!("hidden {}\n", hidden.join(",")));
    s.push_str(&format!("count {}\n", params.len()));
    for v in &params.values {
        s.push_str(&format!("{v:?}\n"));
    }
    s
}

pub fn save(path: &Path, params: &ParamSet, seed: u64) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(to_string(params, seed).as_bytes())?;
    Ok(())
}

fn header<'a>(lines: &mut impl Iterator<Item = (usize, &'a str)>, key: &str) -> Result<&'a str> {
    let (no, line) = lines
        .next()
        .ok_or_else(|| Error::Checkpoint(format!("missing `{key}` header")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint(format!("line {}: expected `{key} <value>`", no + 1)))
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Checkpoint(format!("bad value `{s}` for `{key}`")))
}

/// Parses a checkpoint, returning the parameters and the recorded seed.
pub fn from_str(text: &str) -> Result<(ParamSet, u64)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == MAGIC => {}
        _ => return Err(Error::Checkpoint(format!("missing `{MAGIC}` header"))),
    }
    let seed: u64 = parse_num(header(&mut lines, "seed")?, "seed")?;
    let d: usize = parse_num(header(&mut lines, "d")?, "d")?;
    let steps: usize = parse_num(header(&mut lines, "steps")?, "steps")?;
    let sharing =
        Sharing::parse(header(&mut lines, "sharing")?.trim()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let activation =
        Activation::parse(header(&mut lines, "activation")?.trim()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let hidden = header(&mut lines, "hidden")?
        .split(',')
        .map(|h| parse_num::<usize>(h, "hidden"))
        .collect::<Result<Vec<_>>>()?;
    let count: usize = parse_num(header(&mut lines, "count")?, "count")?;

    let cfg = NetConfig {
        hidden: Some(hidden),
        activation,
        sharing,
        y0_init: Y0Init::Zero,
        ..NetConfig::default()
    };
    let layout = ParamLayout::new(d, steps, &cfg)?;
    if layout.total != count {
        return Err(Error::Checkpoint(format!(
            "header implies {} parameters but count is {count}",
            layout.total
        )));
    }
    let mut values = Vec::with_capacity(count);
    for (no, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: f64 = line
            .parse()
            .map_err(|_| Error::Checkpoint(format!("line {}: bad value `{line}`", no + 1)))?;
        values.push(v);
    }
    if values.len() != count {
        return Err(Error::Checkpoint(format!(
            "expected {count} values, found {}",
            values.len()
        )));
    }
    Ok((ParamSet { layout, values }, seed))
}

pub fn load(path: &Path) -> Result<(ParamSet, u64)> {
    from_str(&fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::params::init_params;

    #[test]
    fn round_trip_is_exact() {
        let cfg = NetConfig {
            sharing: Sharing::Shared,
            activation: Activation::Tanh,
            ..NetConfig::default()
        };
        let mut p = init_params(&cfg, 2, 7, 5).unwrap();
        p.set_y0(2.0f64.sqrt());
        let s = to_string(&p, 5);
        let (q, seed) = from_str(&s).unwrap();
        assert_eq!(seed, 5);
        assert_eq!(p, q);
    }

    #[test]
    fn rejects_corrupt_input() {
        let p = init_params(&NetConfig::default(), 1, 2, 0).unwrap();
        let s = to_string(&p, 0);
        assert!(from_str(&s.replacen("count", "cnt", 1)).is_err());
        let truncated: String = s.lines().take(20).collect::<Vec<_>>().join("\n");
        assert!(from_str(&truncated).is_err());
        assert!(from_str("hello").is_err());
    }
}
