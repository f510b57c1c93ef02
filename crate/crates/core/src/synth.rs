//! Seeded generators for random programs, control-flow graphs, edited file
//! pairs and a small labelled patch corpus.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cpg::FlowGraph;
use crate::error::{Error, Result};
use crate::pipeline::CorpusRecord;

const VARS: &[&str] = &["a", "b", "c", "d", "i", "n"];

struct FnGen<'r, R: Rng> {
    rng: &'r mut R,
    budget: usize,
    out: String,
    loops: usize,
}

impl<R: Rng> FnGen<'_, R> {
    fn var(&mut self) -> &'static str {
        VARS[self.rng.random_range(0..VARS.len())]
    }

    fn expr(&mut self) -> String {
        match self.rng.random_range(0..5) {
            0 => self.var().to_string(),
            1 => self.rng.random_range(0..10).to_string(),
            2 => format!("{} + {}", self.var(), self.var()),
            3 => format!("{} * 2", self.var()),
            _ => format!("g({})", self.var()),
        }
    }

    fn cond(&mut self) -> String {
        match self.rng.random_range(0..3) {
            0 => format!("{} < {}", self.var(), self.var()),
            1 => self.var().to_string(),
            _ => format!("{} != 0", self.var()),
        }
    }

    fn line(&mut self, depth: usize, text: &str) {
        let _ = writeln!(self.out, "{}{}", "  ".repeat(depth + 1), text);
    }

    fn block(&mut self, depth: usize) {
        let k = self.rng.random_range(1..=4);
        for _ in 0..k {
            if self.budget == 0 {
                break;
            }
            self.stmt(depth);
        }
    }

    fn nested(&mut self, depth: usize, header: String) {
        self.line(depth, &format!("{header} {{"));
        self.block(depth + 1);
        self.line(depth, "}");
    }

    fn stmt(&mut self, depth: usize) {
        self.budget -= 1;
        let choices = if depth < 3 { 12 } else { 8 };
        match self.rng.random_range(0..choices) {
            0 => {
                let t = format!("int {} = {};", self.var(), self.expr());
                self.line(depth, &t)
            }
            1 | 2 => {
                let t = format!("{} = {};", self.var(), self.expr());
                self.line(depth, &t)
            }
            3 => {
                let t = format!("{} += {};", self.var(), self.expr());
                self.line(depth, &t)
            }
            4 => {
                let t = format!("use({}, {});", self.var(), self.var());
                self.line(depth, &t)
            }
            5 => {
                let t = format!("{}++;", self.var());
                self.line(depth, &t)
            }
            6 => {
                let t = format!("buf[{}] = {};", self.var(), self.var());
                self.line(depth, &t)
            }
            7 => {
                if self.loops > 0 && self.rng.random_bool(0.5) {
                    let kw = if self.rng.random_bool(0.5) {
                        "break;"
                    } else {
                        "continue;"
                    };
                    self.line(depth, kw);
                } else if self.rng.random_bool(0.3) {
                    let t = format!("return {};", self.var());
                    self.line(depth, &t);
                } else {
                    let t = format!("{} = {};", self.var(), self.expr());
                    self.line(depth, &t);
                }
            }
            8 | 9 => {
                let h = format!("if ({})", self.cond());
                self.nested(depth, h);
                if self.rng.random_bool(0.4) {
                    self.line(depth, "else {");
                    self.block(depth + 1);
                    self.line(depth, "}");
                }
            }
            10 => {
                let h = format!("while ({})", self.cond());
                self.loops += 1;
                self.nested(depth, h);
                self.loops -= 1;
            }
            _ => {
                let (v, w) = (self.var(), self.var());
                self.loops += 1;
                self.nested(depth, format!("for ({v} = 0; {v} < {w}; {v}++)"));
                self.loops -= 1;
            }
        }
    }
}

/// A random function named `name` in the supported C subset, one statement
/// per line, with at most `max_stmts` statements and nested control flow.
pub fn random_function<R: Rng>(rng: &mut R, name: &str, max_stmts: usize) -> String {
    let mut g = FnGen {
        budget: rng.random_range(1..=max_stmts.max(1)),
        rng,
        out: String::new(),
        loops: 0,
    };
    let _ = writeln!(g.out, "int {name}(int n, int *buf) {{");
    while g.budget > 0 {
        g.stmt(0);
    }
    g.out.push_str("}\n");
    g.out
}

/// A random CFG with 3..=`max_nodes` nodes, entry 0 and exit `len - 1`, in
/// which every node is reachable from the entry and reaches the exit.
pub fn random_cfg<R: Rng>(rng: &mut R, max_nodes: usize) -> FlowGraph {
    let n = rng.random_range(3..=max_nodes.max(3));
    let mut f = FlowGraph::new(n, 0, n - 1);
    for v in 0..n - 1 {
        let k = if rng.random_bool(0.6) {
            1
        } else {
            rng.random_range(2..=3)
        };
        for _ in 0..k {
            let to = rng.random_range(1..n);
            f.add_edge(v, to);
        }
    }
    f.ensure_connected();
    f
}

/// A simple statement over the generator's variables.
fn simple_statement<R: Rng>(rng: &mut R) -> String {
    let v = VARS[rng.random_range(0..VARS.len())];
    let w = VARS[rng.random_range(0..VARS.len())];
    match rng.random_range(0..5) {
        0 => format!("{v} = {w} + {};", rng.random_range(0..10)),
        1 => format!("use({v}, {w});"),
        2 => format!("{v} += g({w});"),
        3 => format!("buf[{v}] = {w};"),
        _ => format!("{v}++;"),
    }
}

fn is_simple_line(line: &str) -> bool {
    let t = line.trim();
    t.ends_with(';') && !t.starts_with("for")
}

/// Applies 1 to 3 statement edits (delete, replace or insert) to a source
/// text with one statement per line.
pub fn mutate_source<R: Rng>(rng: &mut R, src: &str) -> String {
    let mut lines: Vec<String> = src.lines().map(str::to_string).collect();
    for _ in 0..rng.random_range(1..=3) {
        let cands: Vec<usize> = (0..lines.len()).filter(|&i| is_simple_line(&lines[i])).collect();
        let Some(&i) = cands.choose(rng) else {
            // no statement line to edit: add one after the first header
            let at = lines.iter().position(|l| l.ends_with('{')).map_or(0, |p| p + 1);
            lines.insert(at, format!("  {}", simple_statement(rng)));
            continue;
        };
        let indent: String = lines[i].chars().take_while(|c| *c == ' ').collect();
        let fresh = format!("{indent}{}", simple_statement(rng));
        match rng.random_range(0..3) {
            0 => {
                lines.remove(i);
            }
            1 => lines[i] = fresh,
            _ => lines.insert(i, fresh),
        }
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

/// A file of one or two random functions and a differing edited copy.
pub fn mutated_pair<R: Rng>(rng: &mut R, max_stmts: usize) -> (String, String) {
    let mut pre = String::new();
    for k in 0..rng.random_range(1..=2) {
        pre.push_str(&random_function(rng, &format!("f{k}"), max_stmts));
        pre.push('\n');
    }
    loop {
        let post = mutate_source(rng, &pre);
        if post != pre {
            return (pre, post);
        }
    }
}

const BOUNDS_HELPERS: &[&str] = &["check_bounds", "index_ok", "in_range"];
const SIZE_HELPERS: &[&str] = &["valid_size", "size_ok", "len_valid"];
const LOG_HELPERS: &[&str] = &["log_event", "trace_msg", "note"];

struct PatchTemplate {
    bounds: &'static str,
    size: &'static str,
    log: &'static str,
    handler: String,
    acc: &'static str,
}

impl PatchTemplate {
    fn helpers(&self) -> String {
        format!(
            "int {b}(int idx, int len) {{\n  if (idx < 0) return 0;\n  return idx < len;\n}}\n\n\
             int {s}(int n) {{\n  if (n <= 0) return 0;\n  return n <= 4096;\n}}\n\n\
             void {l}(int code) {{\n  emit(code);\n}}\n",
            b = self.bounds,
            s = self.size,
            l = self.log
        )
    }

    /// Handler body lines; `copy` and `store` mark the guarded operations.
    fn body(&self, rng: &mut ChaCha8Rng) -> Vec<String> {
        let acc = self.acc;
        let mut v = vec![format!("int {acc} = 0;"), "int v = idx * 2;".to_string()];
        let fillers = [
            format!("{acc} = {acc} + v;"),
            "v = v + 1;".to_string(),
            format!("{acc} += g(v);"),
            "use(v, len);".to_string(),
        ];
        for _ in 0..rng.random_range(1..=3) {
            v.push(fillers.choose(rng).expect("non-empty").clone());
        }
        v.push("copy_data(buf, n);".to_string());
        v.push("buf[idx] = v;".to_string());
        v.push(format!("{acc} = {acc} + buf[idx];"));
        v.push(format!("return {acc};"));
        v
    }

    fn file(&self, body: &[String]) -> String {
        let mut out = format!("int {}(int *buf, int len, int idx, int n) {{\n", self.handler);
        for l in body {
            let _ = writeln!(out, "  {l}");
        }
        out.push_str("}\n");
        out
    }
}

/// Positive edits: guard the buffer store with the bounds helper, guard
/// the copy with the size helper, or both.
fn security_edit(t: &PatchTemplate, rng: &mut ChaCha8Rng, body: &[String]) -> (Vec<String>, &'static str) {
    let mut out = Vec::new();
    let kind = rng.random_range(0..3);
    for l in body {
        if l.starts_with("copy_data") && kind != 0 {
            out.push(format!("if (!{}(n)) return -1;", t.size));
        }
        if l.starts_with("buf[idx]") && kind != 1 {
            out.push(format!("if (!{}(idx, len)) return -1;", t.bounds));
        }
        out.push(l.clone());
    }
    (
        out,
        if kind == 1 {
            "size-validation"
        } else {
            "bounds-check"
        },
    )
}

/// Negative edits: rename the accumulator, add a logging call, or swap two
/// adjacent independent statements.
fn cosmetic_edit(t: &PatchTemplate, rng: &mut ChaCha8Rng, body: &[String]) -> (Vec<String>, &'static str) {
    match rng.random_range(0..3) {
        0 => {
            let to = if t.acc == "total" { "sum" } else { "total" };
            let out = body.iter().map(|l| rename_word(l, t.acc, to)).collect();
            (out, "rename")
        }
        1 => {
            let mut out = body.to_vec();
            let at = out.len() - 1;
            out.insert(at, format!("{}({});", t.log, t.acc));
            (out, "logging")
        }
        _ => {
            let mut out = body.to_vec();
            // the two leading declarations do not depend on each other
            out.swap(0, 1);
            (out, "reorder")
        }
    }
}

fn rename_word(line: &str, from: &str, to: &str) -> String {
    let mut out = String::new();
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        out.push_str(if word == from { to } else { word });
        word.clear();
    };
    for c in line.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `2 * per_class` small repositories under `dir` (one `pre`/`post`
/// pair each) and a `corpus.jsonl` listing them. Positives add bounds or
/// size checks that call repository helpers; negatives are cosmetic.
/// Returns the corpus path.
pub fn generate_corpus(dir: &Path, per_class: usize, seed: u64) -> Result<PathBuf> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = String::new();
    let mut labels: Vec<i64> = [vec![1; per_class], vec![0; per_class]].concat();
    labels.shuffle(&mut rng);
    for (k, &label) in labels.iter().enumerate() {
        let t = PatchTemplate {
            bounds: BOUNDS_HELPERS.choose(&mut rng).expect("non-empty"),
            size: SIZE_HELPERS.choose(&mut rng).expect("non-empty"),
            log: LOG_HELPERS.choose(&mut rng).expect("non-empty"),
            handler: format!("handle_{k}"),
            acc: if rng.random_bool(0.5) { "total" } else { "sum" },
        };
        let body = t.body(&mut rng);
        let (edited, tag) = if label == 1 {
            security_edit(&t, &mut rng, &body)
        } else {
            cosmetic_edit(&t, &mut rng, &body)
        };
        let id = format!("patch_{k:03}");
        let root = dir.join(&id);
        for (side, b) in [("pre", &body), ("post", &edited)] {
            write_file(&root.join(side).join("src/util.c"), &t.helpers())?;
            write_file(&root.join(side).join("src/handler.c"), &t.file(b))?;
        }
        let rec = CorpusRecord {
            id: id.clone(),
            label,
            pre_root: format!("{id}/pre"),
            post_root: format!("{id}/post"),
            changed_paths: None,
            tag: Some(tag.into()),
        };
        lines.push_str(&serde_json::to_string(&rec)?);
        lines.push('\n');
    }
    let path = dir.join("corpus.jsonl");
    write_file(&path, &lines)?;
    Ok(path)
}
