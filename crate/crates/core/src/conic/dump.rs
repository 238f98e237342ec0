//! Line-oriented text dump of a [`ConicProblem`].
//!
//! ```text
//! conic-dump 1
//! dims <n> <m> <nnz>
//! cones <count>
//! zero <dim> | nonneg <dim> | soc <dim> | psd <order>     (one per line)
//! c
//! <n values, one per line>
//! b
//! <m values, one per line>
//! A
//! <row> <col> <value>                                     (nnz lines, row-major)
//! end
//! ```
//!
//! Values are written in Rust's shortest round-trip float form, so reading a
//! dump reproduces the problem bit for bit. Lines starting with `#` are
//! ignored when reading.

use std::fmt::Write as _;

use super::{Cone, ConicError, ConicProblem, SparseMatrix};

pub fn write_dump(problem: &ConicProblem) -> String {
    let a = &problem.constraint_matrix;
    let mut out = String::new();
    let _ = writeln!(out, "conic-dump 1");
    let _ = writeln!(
        out,
        "dims {} {} {}",
        problem.num_vars(),
        problem.num_rows(),
        a.nnz()
    );
    let _ = writeln!(out, "cones {}", problem.cones.len());
    for cone in &problem.cones {
        let _ = match cone {
            Cone::Zero(d) => writeln!(out, "zero {d}"),
            Cone::Nonneg(d) => writeln!(out, "nonneg {d}"),
            Cone::SecondOrder(d) => writeln!(out, "soc {d}"),
            Cone::Psd(n) => writeln!(out, "psd {n}"),
        };
    }
    let _ = writeln!(out, "c");
    for v in &problem.objective {
        let _ = writeln!(out, "{v:?}");
    }
    let _ = writeln!(out, "b");
    for v in &problem.rhs {
        let _ = writeln!(out, "{v:?}");
    }
    let _ = writeln!(out, "A");
    for (r, c, v) in a.triplets() {
        let _ = writeln!(out, "{r} {c} {v:?}");
    }
    let _ = writeln!(out, "end");
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next_line(&mut self) -> Result<&'a str, ConicError> {
        for (i, raw) in self.inner.by_ref() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            self.line = i + 1;
            return Ok(t);
        }
        Err(ConicError::MalformedDump {
            line: self.line + 1,
            reason: "unexpected end of input".into(),
        })
    }

    fn err(&self, reason: impl Into<String>) -> ConicError {
        ConicError::MalformedDump {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn expect(&mut self, keyword: &str) -> Result<Vec<&'a str>, ConicError> {
        let line = self.next_line()?;
        let mut parts = line.split_whitespace();
        if parts.next() != Some(keyword) {
            return Err(self.err(format!("expected `{keyword}`")));
        }
        Ok(parts.collect())
    }

    fn number<T: std::str::FromStr>(&self, tok: &str) -> Result<T, ConicError> {
        tok.parse()
            .map_err(|_| self.err(format!("cannot parse `{tok}`")))
    }
}

pub fn read_dump(text: &str) -> Result<ConicProblem, ConicError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
        line: 0,
    };
    let header = lines.expect("conic-dump")?;
    if header != ["1"] {
        return Err(lines.err("unsupported dump version"));
    }
    let dims = lines.expect("dims")?;
    if dims.len() != 3 {
        return Err(lines.err("dims needs n, m, nnz"));
    }
    let n: usize = lines.number(dims[0])?;
    let m: usize = lines.number(dims[1])?;
    let nnz: usize = lines.number(dims[2])?;
    let count = lines.expect("cones")?;
    let count: usize = lines.number(count.first().copied().unwrap_or(""))?;
    let mut cones = Vec::with_capacity(count);
    for _ in 0..count {
        let line = lines.next_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(lines.err("cone line needs a kind and a size"));
        }
        let d: usize = lines.number(parts[1])?;
        cones.push(match parts[0] {
            "zero" => Cone::Zero(d),
            "nonneg" => Cone::Nonneg(d),
            "soc" => Cone::SecondOrder(d),
            "psd" => Cone::Psd(d),
            other => return Err(lines.err(format!("unknown cone `{other}`"))),
        });
    }
    lines.expect("c")?;
    let mut c = Vec::with_capacity(n);
    for _ in 0..n {
        let tok = lines.next_line()?;
        c.push(lines.number(tok)?);
    }
    lines.expect("b")?;
    let mut b = Vec::with_capacity(m);
    for _ in 0..m {
        let tok = lines.next_line()?;
        b.push(lines.number(tok)?);
    }
    lines.expect("A")?;
    let mut triplets = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let line = lines.next_line()?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(lines.err("triplet needs row, col, value"));
        }
        triplets.push((
            lines.number(parts[0])?,
            lines.number(parts[1])?,
            lines.number(parts[2])?,
        ));
    }
    lines.expect("end")?;
    let a = SparseMatrix::from_triplets(m, n, &triplets)?;
    ConicProblem::new(c, a, b, cones)
}
