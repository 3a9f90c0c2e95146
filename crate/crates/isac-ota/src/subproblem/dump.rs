//! Line-oriented text form of a [`RealifiedProgram`].
//!
//! ```text
//! realified-program 1
//! vars 3
//! constant 0
//! linear 1
//! 2 1.5
//! matrices 1
//! matrix 0 2
//! 1 0
//! 0 1
//! blocks 1
//! block 0 2 0 1            # matrix id, size, variables
//! affine 1
//! row 2 2 0 1 1 1          # rhs, nnz, (index value)*
//! cones 1
//! cone 2 1 2 0 1           # bound variable, scale, count, variables
//! bounds 1
//! bound 2 1e-12
//! layout none              # or: layout <n_t> <n_uavs>
//! end
//! ```
//!
//! Blocks that share a matrix in memory share a matrix id. Floats are written
//! with Rust's shortest round-trip formatting, so dump → parse is exact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Arc;

use super::{AffineRow, DownlinkLayout, HessianBlock, LowerBound, PowerCone, RealifiedProgram};
use crate::error::{Error, Result};
use crate::linalg::RMat;

const MAX_VARS: usize = 1 << 22;
const MAX_MATRIX: usize = 4096;

pub fn dump_program(p: &RealifiedProgram) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "realified-program 1");
    let _ = writeln!(s, "vars {}", p.n_vars);
    let _ = writeln!(s, "constant {}", p.constant);
    let nz: Vec<(usize, f64)> = p.linear.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect();
    let _ = writeln!(s, "linear {}", nz.len());
    for (i, v) in nz {
        let _ = writeln!(s, "{i} {v}");
    }
    let mut ids: HashMap<*const RMat, usize> = HashMap::new();
    let mut mats: Vec<&Arc<RMat>> = Vec::new();
    for b in &p.blocks {
        ids.entry(Arc::as_ptr(&b.matrix)).or_insert_with(|| {
            mats.push(&b.matrix);
            mats.len() - 1
        });
    }
    let _ = writeln!(s, "matrices {}", mats.len());
    for (id, m) in mats.iter().enumerate() {
        let _ = writeln!(s, "matrix {id} {}", m.nrows());
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols()).map(|j| m[(i, j)].to_string()).collect();
            let _ = writeln!(s, "{}", row.join(" "));
        }
    }
    let _ = writeln!(s, "blocks {}", p.blocks.len());
    for b in &p.blocks {
        let vars: Vec<String> = b.vars.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "block {} {} {}", ids[&Arc::as_ptr(&b.matrix)], b.vars.len(), vars.join(" "));
    }
    let _ = writeln!(s, "affine {}", p.affine.len());
    for r in &p.affine {
        let mut line = format!("row {} {}", r.rhs, r.coeffs.len());
        for (j, c) in &r.coeffs {
            let _ = write!(line, " {j} {c}");
        }
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "cones {}", p.cones.len());
    for c in &p.cones {
        let vars: Vec<String> = c.vars.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(s, "cone {} {} {} {}", c.bound_var, c.scale, c.vars.len(), vars.join(" "));
    }
    let _ = writeln!(s, "bounds {}", p.bounds.len());
    for b in &p.bounds {
        let _ = writeln!(s, "bound {} {}", b.var, b.value);
    }
    match p.layout {
        Some(l) => {
            let _ = writeln!(s, "layout {} {}", l.n_t, l.n_uavs);
        }
        None => {
            let _ = writeln!(s, "layout none");
        }
    }
    let _ = writeln!(s, "end");
    s
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line, message: msg.into() }
    }

    /// Next non-empty line with comments stripped, split into tokens.
    fn next(&mut self) -> Result<Vec<&'a str>> {
        for (i, raw) in self.inner.by_ref() {
            self.line = i + 1;
            let body = raw.split('#').next().unwrap_or("");
            let toks: Vec<&str> = body.split_whitespace().collect();
            if !toks.is_empty() {
                return Ok(toks);
            }
        }
        Err(Error::Parse { line: self.line + 1, message: "unexpected end of input".into() })
    }

    fn keyword(&mut self, kw: &str, arity: usize) -> Result<Vec<&'a str>> {
        let t = self.next()?;
        if t[0] != kw {
            return Err(self.err(format!("expected `{kw}`, found `{}`", t[0])));
        }
        if t.len() != arity + 1 {
            return Err(self.err(format!("`{kw}` takes {arity} field(s), found {}", t.len() - 1)));
        }
        Ok(t)
    }

    fn usize(&self, tok: &str) -> Result<usize> {
        tok.parse().map_err(|_| self.err(format!("`{tok}` is not a non-negative integer")))
    }

    fn float(&self, tok: &str) -> Result<f64> {
        let v: f64 = tok.parse().map_err(|_| self.err(format!("`{tok}` is not a number")))?;
        if !v.is_finite() {
            return Err(self.err(format!("`{tok}` is not finite")));
        }
        Ok(v)
    }

    fn var(&self, tok: &str, n: usize) -> Result<usize> {
        let v = self.usize(tok)?;
        if v >= n {
            return Err(self.err(format!("variable {v} out of range (vars {n})")));
        }
        Ok(v)
    }

    fn var_list(&self, toks: &[&str], n: usize) -> Result<Vec<usize>> {
        toks.iter().map(|t| self.var(t, n)).collect()
    }
}

pub fn parse_program_dump(text: &str) -> Result<RealifiedProgram> {
    let mut l = Lines { inner: text.lines().enumerate(), line: 0 };
    let head = l.keyword("realified-program", 1)?;
    if head[1] != "1" {
        return Err(l.err(format!("unsupported version `{}`", head[1])));
    }
    let t = l.keyword("vars", 1)?;
    let n = l.usize(t[1])?;
    if n > MAX_VARS {
        return Err(l.err(format!("too many variables ({n})")));
    }
    let mut p = RealifiedProgram::new(n);
    let t = l.keyword("constant", 1)?;
    p.constant = l.float(t[1])?;

    let t = l.keyword("linear", 1)?;
    let count = l.usize(t[1])?;
    for _ in 0..count {
        let t = l.next()?;
        if t.len() != 2 {
            return Err(l.err("linear entry needs `index value`"));
        }
        let j = l.var(t[0], n)?;
        p.linear[j] = l.float(t[1])?;
    }

    let t = l.keyword("matrices", 1)?;
    let count = l.usize(t[1])?;
    let mut mats: Vec<Arc<RMat>> = Vec::new();
    for id in 0..count {
        let t = l.keyword("matrix", 2)?;
        if l.usize(t[1])? != id {
            return Err(l.err(format!("expected matrix id {id}")));
        }
        let k = l.usize(t[2])?;
        if k > MAX_MATRIX {
            return Err(l.err(format!("matrix too large ({k})")));
        }
        let mut m = RMat::zeros(k, k);
        for i in 0..k {
            let row = l.next()?;
            if row.len() != k {
                return Err(l.err(format!("matrix row needs {k} entries, found {}", row.len())));
            }
            for (j, tok) in row.iter().enumerate() {
                m[(i, j)] = l.float(tok)?;
            }
        }
        mats.push(Arc::new(m));
    }

    let t = l.keyword("blocks", 1)?;
    let count = l.usize(t[1])?;
    for _ in 0..count {
        let t = l.next()?;
        if t[0] != "block" || t.len() < 3 {
            return Err(l.err("expected `block <matrix> <size> <vars...>`"));
        }
        let id = l.usize(t[1])?;
        let matrix = mats.get(id).cloned().ok_or_else(|| l.err(format!("unknown matrix id {id}")))?;
        let size = l.usize(t[2])?;
        if t.len() != 3 + size {
            return Err(l.err(format!("block declares {size} variables, lists {}", t.len() - 3)));
        }
        if size != matrix.nrows() {
            return Err(l.err(format!("block size {size} does not match matrix {id}")));
        }
        p.blocks.push(HessianBlock { vars: l.var_list(&t[3..], n)?, matrix });
    }

    let t = l.keyword("affine", 1)?;
    let count = l.usize(t[1])?;
    for _ in 0..count {
        let t = l.next()?;
        if t[0] != "row" || t.len() < 3 {
            return Err(l.err("expected `row <rhs> <nnz> (<index> <value>)*`"));
        }
        let rhs = l.float(t[1])?;
        let nnz = l.usize(t[2])?;
        if nnz > n || t.len() != 3 + 2 * nnz {
            return Err(l.err(format!("row declares {nnz} entries, lists {} tokens", t.len() - 3)));
        }
        let mut coeffs = Vec::with_capacity(nnz);
        for k in 0..nnz {
            coeffs.push((l.var(t[3 + 2 * k], n)?, l.float(t[4 + 2 * k])?));
        }
        p.affine.push(AffineRow { coeffs, rhs });
    }

    let t = l.keyword("cones", 1)?;
    let count = l.usize(t[1])?;
    for _ in 0..count {
        let t = l.next()?;
        if t[0] != "cone" || t.len() < 4 {
            return Err(l.err("expected `cone <bound var> <scale> <count> <vars...>`"));
        }
        let bound_var = l.var(t[1], n)?;
        let scale = l.float(t[2])?;
        let k = l.usize(t[3])?;
        if t.len() != 4 + k {
            return Err(l.err(format!("cone declares {k} variables, lists {}", t.len() - 4)));
        }
        p.cones.push(PowerCone { vars: l.var_list(&t[4..], n)?, bound_var, scale });
    }

    let t = l.keyword("bounds", 1)?;
    let count = l.usize(t[1])?;
    for _ in 0..count {
        let t = l.keyword("bound", 2)?;
        p.bounds.push(LowerBound { var: l.var(t[1], n)?, value: l.float(t[2])? });
    }

    let t = l.next()?;
    if t[0] != "layout" {
        return Err(l.err(format!("expected `layout`, found `{}`", t[0])));
    }
    p.layout = match t.as_slice() {
        [_, "none"] => None,
        [_, a, b] => {
            let layout = DownlinkLayout { n_t: l.usize(a)?, n_uavs: l.usize(b)? };
            let want = layout
                .n_uavs
                .checked_add(1)
                .and_then(|c| c.checked_mul(layout.n_t))
                .and_then(|x| x.checked_mul(2))
                .and_then(|x| x.checked_add(1));
            if want != Some(n) {
                return Err(l.err("layout does not match the variable count"));
            }
            Some(layout)
        }
        _ => return Err(l.err("expected `layout none` or `layout <n_t> <n_uavs>`")),
    };
    l.keyword("end", 0)?;
    let line = l.line;
    if let Ok(extra) = l.next() {
        return Err(Error::Parse {
            line: l.line,
            message: format!("trailing content after `end` (line {line}): `{}`", extra[0]),
        });
    }
    p.validate().map_err(|e| Error::Parse { line: 0, message: e.to_string() })?;
    Ok(p)
}
