//! Flat-text checkpoint of a trained state and the loss-trace TSV.
//!
//! ```text
//! dpn-checkpoint 1
//! activation <identity|tanh>
//! shape <d_in> <d_out>
//! epoch <n>
//! weights            (d_out rows of d_in tab-separated values)
//! bias               (one row)
//! labeled <M>        (M rows: key, values...)
//! unlabeled <K>      (K rows)
//! permutation        (one row of M indices)
//! cost <M> <K>       (M rows)
//! assignment <n>     (one row; cluster index per unlabeled instance)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use crate::alignment::{decouple, MatchingResult, PrototypeKind, PrototypeSet};
use crate::error::{Error, Result};
use crate::vector::Vector;

use super::head::ProjectionHead;
use super::train::{LossBreakdown, TrainState};

const MAGIC: &str = "dpn-checkpoint 1";

fn join(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push('\t');
        }
        let _ = write!(s, "{v}");
    }
    s
}

pub fn checkpoint_to_text(state: &TrainState) -> String {
    let head = &state.head;
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "activation {}", head.activation());
    let _ = writeln!(out, "shape {} {}", head.d_in(), head.d_out());
    let _ = writeln!(out, "epoch {}", state.epoch);
    let _ = writeln!(out, "weights");
    for row in head.weights().chunks_exact(head.d_in()) {
        let _ = writeln!(out, "{}", join(row));
    }
    let _ = writeln!(out, "bias");
    let _ = writeln!(out, "{}", join(head.bias()));
    let _ = writeln!(out, "labeled {}", state.labeled_prototypes.len());
    for (key, p) in state
        .labeled_prototypes
        .category_keys
        .iter()
        .zip(&state.labeled_prototypes.prototypes)
    {
        let _ = writeln!(out, "{key}\t{}", join(p.as_slice()));
    }
    let _ = writeln!(out, "unlabeled {}", state.unlabeled_prototypes.len());
    for p in &state.unlabeled_prototypes.prototypes {
        let _ = writeln!(out, "{}", join(p.as_slice()));
    }
    let perm: Vec<String> = state.matching.permutation.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(out, "permutation");
    let _ = writeln!(out, "{}", perm.join("\t"));
    let _ = writeln!(out, "cost {} {}", state.matching.cost_matrix.len(), state.matching.k());
    for row in &state.matching.cost_matrix {
        let _ = writeln!(out, "{}", join(row));
    }
    let assignment: Vec<String> = state.unlabeled_assignment.iter().map(|i| i.to_string()).collect();
    let _ = writeln!(out, "assignment {}", assignment.len());
    let _ = writeln!(out, "{}", assignment.join("\t"));
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<(usize, &'a str)> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| Error::Parse("checkpoint truncated".into()))
    }

    fn expect_keyword(&mut self, keyword: &str) -> Result<Vec<usize>> {
        let (n, line) = self.next()?;
        let mut parts = line.split(' ');
        if parts.next() != Some(keyword) {
            return Err(Error::Parse(format!("line {n}: expected `{keyword}`, got `{line}`")));
        }
        parts
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::Parse(format!("line {n}: bad integer `{p}`")))
            })
            .collect()
    }

    fn floats(&mut self) -> Result<Vec<f64>> {
        let (n, line) = self.next()?;
        parse_floats(line, n)
    }

    fn indices(&mut self) -> Result<Vec<usize>> {
        let (n, line) = self.next()?;
        if line.is_empty() {
            return Ok(Vec::new());
        }
        line.split('\t')
            .map(|p| {
                p.parse()
                    .map_err(|_| Error::Parse(format!("line {n}: bad index `{p}`")))
            })
            .collect()
    }
}

fn parse_floats(line: &str, n: usize) -> Result<Vec<f64>> {
    line.split('\t')
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Parse(format!("line {n}: bad number `{p}`")))
        })
        .collect()
}

fn one(values: Vec<usize>, what: &str) -> Result<usize> {
    match values.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::Parse(format!("`{what}` takes one integer"))),
    }
}

pub fn checkpoint_from_text(text: &str) -> Result<TrainState> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (_, magic) = lines.next()?;
    if magic != MAGIC {
        return Err(Error::Parse(format!("not a checkpoint (header `{magic}`)")));
    }
    let (n, act) = lines.next()?;
    let activation = act
        .strip_prefix("activation ")
        .ok_or_else(|| Error::Parse(format!("line {n}: expected activation")))?
        .parse()?;
    let shape = lines.expect_keyword("shape")?;
    let [d_in, d_out] = shape[..] else {
        return Err(Error::Parse("`shape` takes two integers".into()));
    };
    let epoch = one(lines.expect_keyword("epoch")?, "epoch")?;

    lines.expect_keyword("weights")?;
    let mut weights = Vec::with_capacity(d_in * d_out);
    for _ in 0..d_out {
        weights.extend(lines.floats()?);
    }
    lines.expect_keyword("bias")?;
    let bias = lines.floats()?;
    let head = ProjectionHead::new(d_in, d_out, weights, bias, activation)?;

    let m = one(lines.expect_keyword("labeled")?, "labeled")?;
    let mut keys = Vec::with_capacity(m);
    let mut labeled = Vec::with_capacity(m);
    for _ in 0..m {
        let (n, line) = lines.next()?;
        let (key, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::Parse(format!("line {n}: expected key and values")))?;
        keys.push(key.to_string());
        labeled.push(Vector::new(parse_floats(rest, n)?)?);
    }
    let k = one(lines.expect_keyword("unlabeled")?, "unlabeled")?;
    let unlabeled = (0..k)
        .map(|_| Vector::new(lines.floats()?))
        .collect::<Result<Vec<_>>>()?;

    lines.expect_keyword("permutation")?;
    let permutation = lines.indices()?;
    let cost_shape = lines.expect_keyword("cost")?;
    if cost_shape != [m, k] {
        return Err(Error::Parse(format!(
            "cost matrix shape {cost_shape:?}, expected [{m}, {k}]"
        )));
    }
    let cost = (0..m).map(|_| lines.floats()).collect::<Result<Vec<_>>>()?;
    let count = one(lines.expect_keyword("assignment")?, "assignment")?;
    let assignment = lines.indices()?;
    if assignment.len() != count {
        return Err(Error::Parse("assignment length differs from header".into()));
    }

    let matching = MatchingResult::from_permutation(permutation, cost)?;
    let decoupled = decouple(&matching, &assignment)?;
    Ok(TrainState {
        head,
        labeled_prototypes: PrototypeSet::new(PrototypeKind::Labeled, labeled, keys)?,
        unlabeled_prototypes: PrototypeSet::new(PrototypeKind::Unlabeled, unlabeled, Vec::new())?,
        matching,
        unlabeled_assignment: assignment,
        decoupled,
        epoch,
        loss_trace: Vec::new(),
    })
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_to_text(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_text(&text)
}

pub const LOSS_TRACE_HEADER: &str = "epoch\tspl_novel\tspl_known\tce\treg\ttotal";

pub fn loss_trace_tsv(trace: &[LossBreakdown]) -> String {
    let mut out = String::from(LOSS_TRACE_HEADER);
    out.push('\n');
    for (epoch, b) in trace.iter().enumerate() {
        let _ = writeln!(
            out,
            "{epoch}\t{}\t{}\t{}\t{}\t{}",
            b.spl_novel, b.spl_known, b.ce, b.reg, b.total
        );
    }
    out
}
