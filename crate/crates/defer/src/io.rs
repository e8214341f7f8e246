//! File formats: partition dumps (JSON Lines), timeline CSV, atomic writes,
//! and reconstruction of a queryable tree from a dump.
//!
//! A dump holds one leaf per line, in tree-creation order, with bounds in
//! original units and the offset-shifted log density (the global log offset
//! is recorded in run metadata, not here, so rescaling the target leaves the
//! dump unchanged). Densities of zero serialize as the string `"-inf"`.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::domain::DomainSpec;
use crate::engine::{Aggregates, Checkpoint};
use crate::error::{DeferError, Result};
use crate::geom::{pow3, TernaryBox, MAX_DEPTH};
use crate::tree::Tree;

/// One leaf line in a partition dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafRecord {
    pub id: u32,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub depths: Vec<u8>,
    #[serde(serialize_with = "ser_float", deserialize_with = "de_float")]
    pub log_f: f64,
}

fn ser_float<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if *v < 0.0 {
        s.serialize_str("-inf")
    } else {
        s.serialize_str("inf")
    }
}

fn de_float<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum NumOrStr {
        Num(f64),
        Str(String),
    }
    match NumOrStr::deserialize(d)? {
        NumOrStr::Num(v) => Ok(v),
        NumOrStr::Str(s) => match s.as_str() {
            "-inf" => Ok(f64::NEG_INFINITY),
            "inf" => Ok(f64::INFINITY),
            other => Err(serde::de::Error::custom(format!(
                "expected a float or \"-inf\"/\"inf\", got {other:?}"
            ))),
        },
    }
}

/// Write the live leaves in creation order, one JSON object per line.
pub fn write_partitions<W: Write>(tree: &Tree, aggregates: &Aggregates, mut w: W) -> Result<()> {
    let offset = aggregates.log_offset();
    for id in tree.leaf_ids() {
        let (lo, hi) = tree.box_original(id);
        let record = LeafRecord {
            id,
            lo,
            hi,
            depths: tree.boxx(id).depths().to_vec(),
            log_f: tree.log_f(id) + offset,
        };
        serde_json::to_writer(&mut w, &record).map_err(|e| DeferError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Parse a partition dump.
pub fn read_partitions<R: BufRead>(r: R) -> Result<Vec<LeafRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LeafRecord = serde_json::from_str(&line)
            .map_err(|e| DeferError::Parse(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(DeferError::Parse("empty partition dump".into()));
    }
    Ok(out)
}

/// Timeline CSV: `evals,log_z,entropy,decision_seconds,wall_seconds`.
/// Timing columns are wall-clock measurements (cumulative) and are the only
/// non-deterministic output of a run.
pub fn write_timeline<W: Write>(rows: &[Checkpoint], mut w: W) -> Result<()> {
    writeln!(w, "evals,log_z,entropy,decision_seconds,wall_seconds")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{:.6},{:.6}",
            row.evals, row.log_z, row.entropy, row.decision_seconds, row.wall_seconds
        )?;
    }
    Ok(())
}

/// Sample CSV: header `x0,...,x{D-1}`, one point per row, original units.
pub fn write_samples<W: Write>(dim: usize, points_flat: &[f64], mut w: W) -> Result<()> {
    let header: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in points_flat.chunks_exact(dim) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Write `bytes` to `path` atomically (temp file in the same directory, then
/// rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// A dump loaded back into a queryable form: a reconstructed tree whose
/// leaves are exactly the dumped leaves, plus aggregates carrying the log
/// offset (from run metadata; zero if unknown).
pub struct LoadedRun {
    pub tree: Tree,
    pub aggregates: Aggregates,
}

/// Rebuild a tree from dump records. The hierarchy is reconstructed by
/// repeated single-dimension trisection, which yields a valid search tree
/// with the same leaf set regardless of the original division order; the
/// process also verifies that the records tile their bounding box.
pub fn rebuild(records: &[LeafRecord], log_offset: f64) -> Result<LoadedRun> {
    let dim = records
        .first()
        .map(|r| r.lo.len())
        .ok_or_else(|| DeferError::Parse("empty partition dump".into()))?;
    for r in records {
        if r.lo.len() != dim || r.hi.len() != dim || r.depths.len() != dim {
            return Err(DeferError::Parse(format!(
                "leaf {} has inconsistent dimensionality",
                r.id
            )));
        }
        if r.depths.iter().any(|&k| k > MAX_DEPTH) {
            return Err(DeferError::Parse(format!("leaf {} exceeds depth cap", r.id)));
        }
    }

    // Domain = bounding box of the leaves.
    let lower: Vec<f64> = (0..dim)
        .map(|d| records.iter().map(|r| r.lo[d]).fold(f64::INFINITY, f64::min))
        .collect();
    let upper: Vec<f64> = (0..dim)
        .map(|d| records.iter().map(|r| r.hi[d]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    let domain = DomainSpec::new(lower, upper)?;

    // Recover exact integer numerators from the float bounds.
    let mut boxes: Vec<TernaryBox> = Vec::with_capacity(records.len());
    for r in records {
        let mut nums = Vec::with_capacity(dim);
        for d in 0..dim {
            let k = r.depths[d];
            let u = domain.normalize_coord(d, r.lo[d]);
            let n = (u * pow3(k) as f64).round();
            if !(n >= 0.0) || n >= pow3(k) as f64 {
                return Err(DeferError::Parse(format!(
                    "leaf {}: bound {} does not sit on the ternary grid",
                    r.id, r.lo[d]
                )));
            }
            nums.push(n as u64);
        }
        boxes.push(TernaryBox::from_parts(nums, r.depths.clone())?);
    }

    let masses: Vec<f64> = records
        .iter()
        .zip(&boxes)
        .map(|(r, b)| b.volume() * r.log_f.exp())
        .collect();
    let raw_log_f: Vec<f64> = records.iter().map(|r| r.log_f - log_offset).collect();

    if records.len() == 1 {
        if boxes[0] != TernaryBox::root(dim) {
            return Err(DeferError::Parse("single leaf does not span its domain".into()));
        }
        let tree = Tree::create_root(domain, raw_log_f[0], masses[0])?;
        return Ok(LoadedRun {
            tree,
            aggregates: Aggregates::with_offset(log_offset),
        });
    }

    let mut tree = Tree::create_root(domain, 0.0, 0.0)?;
    let all: Vec<usize> = (0..records.len()).collect();
    split_into(&mut tree, Tree::ROOT, &all, &boxes, &raw_log_f, &masses)?;
    Ok(LoadedRun {
        tree,
        aggregates: Aggregates::with_offset(log_offset),
    })
}

/// Recursively divide `node` (a placeholder leaf) until each dumped box is a
/// leaf of the rebuilt tree.
fn split_into(
    tree: &mut Tree,
    node: crate::tree::NodeId,
    members: &[usize],
    boxes: &[TernaryBox],
    log_f: &[f64],
    masses: &[f64],
) -> Result<()> {
    debug_assert!(members.len() >= 2);
    let node_box = tree.boxx(node).clone();
    let dim = node_box.dim();
    // A trisection always deepens its first-ranked dimension in every child,
    // so a dimension along which all members are strictly deeper than this
    // node exists in any dump produced by the engine and splits the members
    // three ways cleanly.
    let split_dim = (0..dim)
        .find(|&d| {
            members
                .iter()
                .all(|&m| boxes[m].depths()[d] > node_box.depths()[d])
        })
        .ok_or_else(|| {
            DeferError::Parse("overlapping or misaligned leaves: records do not form a ternary division tree".into())
        })?;

    let children = node_box.trisect(&[split_dim])?;
    let mut groups: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    'member: for &m in members {
        for (ci, child) in children.iter().enumerate() {
            let (clo, chi) = child.boxx.cell_range(split_dim);
            let (mlo, mhi) = boxes[m].cell_range(split_dim);
            if mlo >= clo && mhi <= chi {
                groups[ci].push(m);
                continue 'member;
            }
        }
        return Err(DeferError::Parse(
            "leaf bounds are not aligned to the ternary grid".into(),
        ));
    }

    let mut entries = Vec::with_capacity(3);
    for (ci, child) in children.iter().enumerate() {
        match groups[ci].as_slice() {
            [] => {
                return Err(DeferError::Parse(
                    "gap in leaf coverage: records do not tile their domain".into(),
                ))
            }
            [one] if boxes[*one] == child.boxx => {
                entries.push((child.boxx.clone(), log_f[*one], masses[*one]));
            }
            _ => entries.push((child.boxx.clone(), 0.0, 0.0)),
        }
    }
    let ids = tree.push_children(node, entries)?;

    for (ci, id) in ids.enumerate() {
        let g = &groups[ci];
        if g.len() == 1 && boxes[g[0]] == *tree.boxx(id) {
            continue;
        }
        if g.len() == 1 {
            // A single member strictly inside the child would leave a gap.
            return Err(DeferError::Parse(
                "gap in leaf coverage: records do not tile their domain".into(),
            ));
        }
        split_into(tree, id, g, boxes, log_f, masses)?;
    }
    Ok(())
}
