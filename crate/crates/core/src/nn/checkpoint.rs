//! Plain-text network checkpoints.
//!
//! ```text
//! spmarl-checkpoint v1
//! network <name> <n_layers>
//! layer <n_in> <n_out>
//! <n_in lines of n_out weights>      # row i holds the weights leaving input i
//! <1 line of n_out biases>
//! ...
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip float format, so a
//! save/load cycle is exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Layer, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_HEADER: &str = "spmarl-checkpoint v1";

pub fn save_checkpoint(path: &Path, networks: &[(&str, &Mlp)]) -> Result<()> {
    let mut out = String::new();
    out.push_str(CHECKPOINT_HEADER);
    out.push('\n');
    for (name, net) in networks {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid network name {name:?}")));
        }
        writeln!(out, "network {name} {}", net.layers.len()).unwrap();
        for layer in &net.layers {
            writeln!(out, "layer {} {}", layer.n_in, layer.n_out).unwrap();
            for row in layer.weights.chunks(layer.n_out) {
                push_row(&mut out, row);
            }
            push_row(&mut out, &layer.bias);
        }
    }
    out.push_str("end\n");
    fs::write(path, out)?;
    Ok(())
}

fn push_row(out: &mut String, row: &[f64]) {
    for (i, v) in row.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").unwrap();
    }
    out.push('\n');
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Mlp)>> {
    let text = fs::read_to_string(path)?;
    parse(&text)
}

fn parse(text: &str) -> Result<Vec<(String, Mlp)>> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {line}: {msg}"));

    match lines.next() {
        Some((_, h)) if h == CHECKPOINT_HEADER => {}
        Some((n, h)) => return Err(bad(n, &format!("unsupported header {h:?}"))),
        None => return Err(bad(0, "empty file")),
    }

    let mut networks = Vec::new();
    loop {
        let (n, line) = lines.next().ok_or_else(|| bad(0, "missing `end`"))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["end"] => break,
            ["network", name, count] => {
                let count: usize = count.parse().map_err(|_| bad(n, "bad layer count"))?;
                let mut layers = Vec::with_capacity(count);
                for _ in 0..count {
                    let (n, line) = lines.next().ok_or_else(|| bad(n, "truncated network"))?;
                    let dims: Vec<&str> = line.split_whitespace().collect();
                    let (n_in, n_out) = match dims.as_slice() {
                        ["layer", a, b] => (
                            a.parse::<usize>().map_err(|_| bad(n, "bad layer shape"))?,
                            b.parse::<usize>().map_err(|_| bad(n, "bad layer shape"))?,
                        ),
                        _ => return Err(bad(n, "expected `layer <in> <out>`")),
                    };
                    let mut weights = Vec::with_capacity(n_in * n_out);
                    for _ in 0..n_in {
                        let (n, row) = lines.next().ok_or_else(|| bad(n, "truncated weights"))?;
                        weights.extend(parse_row(row, n_out).map_err(|m| bad(n, &m))?);
                    }
                    let (nb, row) = lines.next().ok_or_else(|| bad(n, "missing bias row"))?;
                    let bias = parse_row(row, n_out).map_err(|m| bad(nb, &m))?;
                    layers.push(Layer {
                        n_in,
                        n_out,
                        weights,
                        bias,
                    });
                }
                let net = Mlp { layers };
                net.validate()
                    .map_err(|e| bad(n, &format!("network {name}: {e}")))?;
                networks.push((name.to_string(), net));
            }
            _ => return Err(bad(n, "expected `network` or `end`")),
        }
    }
    Ok(networks)
}

fn parse_row(row: &str, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let values = row
        .split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| format!("bad number {t:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!("expected {expected} values, got {}", values.len()));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::context::SimRng;
    use rand::SeedableRng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = SimRng::seed_from_u64(4);
        let actor = Mlp::new(7, 5, 3, 0.01, &mut rng);
        let critic = Mlp::new(7, 5, 1, 1.0, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.txt");
        save_checkpoint(&path, &[("actor", &actor), ("critic", &critic)]).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "actor");
        assert_eq!(loaded[0].1, actor);
        assert_eq!(loaded[1].1, critic);
    }

    #[test]
    fn rejects_malformed_files() {
        assert!(parse("nonsense\n").is_err());
        assert!(parse("spmarl-checkpoint v1\nnetwork a 1\nlayer 2 1\n1.0\n").is_err());
        let err = parse("spmarl-checkpoint v1\nnetwork a 1\nlayer 1 2\n1.0 x\n0 0\nend\n").unwrap_err();
        assert!(err.to_string().contains("line 4"), "{err}");
    }
}
