//! Oracle suites behind `repospd selftest`: graph construction on random
//! programs is compared with brute-force recomputations.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use repospd_core::cfrontend::{collect_functions, parse_source};
use repospd_core::cpg::{build_cfg, build_cpg, build_file_cpgs, control_dependence, flow_access};
use repospd_core::ingest::{diff_lines, split_lines, RepoSnapshot, Side};
use repospd_core::merge::{file_graph, merge_file};
use repospd_core::oracle::{check_projection, check_slice, naive_data_dependence, path_control_dependence};
use repospd_core::pipeline::{build_patch, BuildConfig};
use repospd_core::slice::{slice, Direction, SliceConfig};
use repospd_core::synth::{mutated_pair, random_cfg, random_function};
use repospd_core::EdgeType;

type Outcome = Result<String, String>;

/// Called from the generated functions so that some call sites resolve.
const HELPERS: &str = "int g(int x) {\n  return x * 2;\n}\n\nvoid use(int p, int q) {\n  sink(p + q);\n}\n";

/// Each suite draws from its own stream so that changing `cases` for one
/// does not shift the inputs of another.
fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn data_dependence(seed: u64, cases: usize) -> Outcome {
    let mut rng = rng(seed, 1);
    let mut edges = 0;
    for k in 0..cases {
        let src = random_function(&mut rng, "f", 30);
        let ast = parse_source(&src, "r.c");
        let f = &collect_functions(&ast)[0];
        let sf = build_cfg(&ast, f);
        let cpg = build_cpg(&ast, f);
        // flow index -> graph node
        let mut node_of = vec![cpg.entry];
        node_of.extend((0..cpg.graph.nodes.len()).filter(|&i| cpg.graph.nodes[i].stmt));
        node_of.push(cpg.exit);
        let want: BTreeSet<(usize, usize, String)> = naive_data_dependence(&sf.flow, &flow_access(&ast, &sf))
            .into_iter()
            .filter(|(d, u, _)| d != u)
            .map(|(d, u, v)| (node_of[d], node_of[u], v))
            .collect();
        let got: BTreeSet<(usize, usize, String)> = cpg
            .graph
            .edges_of(EdgeType::Ddg)
            .map(|e| (e.src, e.dst, e.label.clone().unwrap_or_default()))
            .collect();
        if got != want {
            return Err(format!("case {k} differs:\n{src}"));
        }
        edges += got.len();
    }
    Ok(format!("{cases} functions, {edges} edges"))
}

fn control_dependence_suite(seed: u64, cases: usize) -> Outcome {
    let mut rng = rng(seed, 2);
    let mut pairs = 0;
    for k in 0..cases {
        let f = random_cfg(&mut rng, 12);
        let got = control_dependence(&f);
        if got != path_control_dependence(&f) {
            return Err(format!("case {k} differs: {f:?}"));
        }
        pairs += got.len();
    }
    Ok(format!("{cases} graphs, {pairs} pairs"))
}

fn pairs(seed: u64, cases: usize) -> Vec<(String, String)> {
    let mut rng = rng(seed, 3);
    (0..cases).map(|_| mutated_pair(&mut rng, 20)).collect()
}

fn merge_projection(seed: u64, cases: usize) -> Outcome {
    for (k, (pre, post)) in pairs(seed, cases).iter().enumerate() {
        let a = build_file_cpgs(&parse_source(pre, "a.c"));
        let b = build_file_cpgs(&parse_source(post, "a.c"));
        let d = diff_lines(&split_lines(pre), &split_lines(post));
        let m = merge_file(&a, &b, &d.line_map);
        check_projection(&m, Side::Pre, &file_graph(&a))
            .and_then(|_| check_projection(&m, Side::Post, &file_graph(&b)))
            .map_err(|e| format!("case {k}: {e}"))?;
    }
    Ok(format!("{cases} pairs reconstruct both sides"))
}

fn slice_soundness(seed: u64, cases: usize) -> Outcome {
    let mut retained = 0;
    for (k, (pre, post)) in pairs(seed, cases).iter().enumerate() {
        let pre_snap = RepoSnapshot::from_sources(Side::Pre, [("a.c", pre.as_str()), ("lib.c", HELPERS)]);
        let post_snap = RepoSnapshot::from_sources(Side::Post, [("a.c", post.as_str()), ("lib.c", HELPERS)]);
        let built = build_patch(&pre_snap, &post_snap, None, &BuildConfig::default())
            .map_err(|e| format!("case {k}: {e}"))?;
        for dir in [Direction::Deleted, Direction::Added] {
            let mut prev: Option<Vec<bool>> = None;
            for hops in 1..=3 {
                let cfg = SliceConfig {
                    hops,
                    include_ast_subtrees: true,
                };
                let keep = slice(&built.unsliced, dir, &cfg);
                check_slice(&built.unsliced, dir, &cfg, &keep)
                    .map_err(|e| format!("case {k}, {dir:?}, hops {hops}: {e}"))?;
                if prev
                    .as_ref()
                    .is_some_and(|p| p.iter().zip(&keep).any(|(a, b)| *a && !b))
                {
                    return Err(format!(
                        "case {k}, {dir:?}: hops {hops} drops nodes kept at {}",
                        hops - 1
                    ));
                }
                retained += keep.iter().filter(|&&x| x).count();
                prev = Some(keep);
            }
        }
    }
    Ok(format!("{cases} pairs, {retained} retained nodes justified"))
}

pub fn run_all(seed: u64, cases: usize) -> Vec<(&'static str, Outcome)> {
    vec![
        ("data dependence", data_dependence(seed, cases)),
        ("control dependence", control_dependence_suite(seed, cases)),
        ("merge projection", merge_projection(seed, cases)),
        ("slice soundness", slice_soundness(seed, cases)),
    ]
}
