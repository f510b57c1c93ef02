use std::collections::{BTreeMap, BTreeSet, VecDeque};

use fixedbitset::FixedBitSet;

use super::flow::FlowGraph;
use crate::cfrontend::Access;

/// Post-dominator sets by iterative dataflow on the reversed CFG.
/// `pdom[v]` contains `v`. Requires every node to reach the exit.
pub fn postdominators(flow: &FlowGraph) -> Vec<FixedBitSet> {
    let n = flow.len();
    let mut full = FixedBitSet::with_capacity(n);
    full.insert_range(..);
    let mut pdom = vec![full; n];
    pdom[flow.exit].clear();
    pdom[flow.exit].insert(flow.exit);
    let mut changed = true;
    while changed {
        changed = false;
        for v in (0..n).rev() {
            if v == flow.exit {
                continue;
            }
            let mut next = FixedBitSet::with_capacity(n);
            let mut succs = flow.succs[v].iter();
            if let Some(&s) = succs.next() {
                next.union_with(&pdom[s]);
                for &s in succs {
                    next.intersect_with(&pdom[s]);
                }
            }
            next.insert(v);
            if next != pdom[v] {
                pdom[v] = next;
                changed = true;
            }
        }
    }
    pdom
}

/// Immediate post-dominator of every node except the exit: the strict
/// post-dominator whose own set is exactly one smaller.
pub fn immediate_postdominators(pdom: &[FixedBitSet]) -> Vec<Option<usize>> {
    pdom.iter()
        .enumerate()
        .map(|(v, set)| {
            let size = set.count_ones(..);
            set.ones().find(|&d| d != v && pdom[d].count_ones(..) + 1 == size)
        })
        .collect()
}

/// Pairs `(a, b)` with `b` control dependent on `a`, including `(a, a)` for
/// loop headers. Walks the post-dominator tree from each successor of a
/// branch up to the branch's immediate post-dominator.
pub fn control_dependence(flow: &FlowGraph) -> BTreeSet<(usize, usize)> {
    let pdom = postdominators(flow);
    let ipdom = immediate_postdominators(&pdom);
    let mut out = BTreeSet::new();
    for a in 0..flow.len() {
        if flow.succs[a].len() < 2 {
            continue;
        }
        for &s in &flow.succs[a] {
            let mut runner = Some(s);
            while let Some(r) = runner {
                if Some(r) == ipdom[a] {
                    break;
                }
                out.insert((a, r));
                runner = ipdom[r];
            }
        }
    }
    out
}

/// Def-use triples `(def node, use node, variable)` from reaching
/// definitions solved with a worklist. `access` is indexed by flow node.
pub fn data_dependence(flow: &FlowGraph, access: &[Access]) -> BTreeSet<(usize, usize, String)> {
    let n = flow.len();
    // Def sites, grouped per variable for kill sets.
    let mut sites: Vec<(usize, &str)> = Vec::new();
    let mut by_var: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (v, a) in access.iter().enumerate() {
        for var in &a.defs {
            by_var.entry(var.as_str()).or_default().push(sites.len());
            sites.push((v, var.as_str()));
        }
    }
    let m = sites.len();
    let mut gen = vec![FixedBitSet::with_capacity(m); n];
    let mut kill = vec![FixedBitSet::with_capacity(m); n];
    for (i, &(v, var)) in sites.iter().enumerate() {
        gen[v].insert(i);
        for &j in &by_var[var] {
            if j != i {
                kill[v].insert(j);
            }
        }
    }

    let preds = flow.preds();
    let mut out_sets = gen.clone();
    let mut in_sets = vec![FixedBitSet::with_capacity(m); n];
    let mut queued = vec![true; n];
    let mut work: VecDeque<usize> = (0..n).collect();
    while let Some(v) = work.pop_front() {
        queued[v] = false;
        let mut input = FixedBitSet::with_capacity(m);
        for &p in &preds[v] {
            input.union_with(&out_sets[p]);
        }
        let mut output = input.clone();
        output.difference_with(&kill[v]);
        output.union_with(&gen[v]);
        in_sets[v] = input;
        if output != out_sets[v] {
            out_sets[v] = output;
            for &s in &flow.succs[v] {
                if !queued[s] {
                    queued[s] = true;
                    work.push_back(s);
                }
            }
        }
    }

    let mut out = BTreeSet::new();
    for (u, a) in access.iter().enumerate() {
        for var in &a.uses {
            let Some(ids) = by_var.get(var.as_str()) else {
                continue;
            };
            for &i in ids {
                if in_sets[u].contains(i) {
                    out.insert((sites[i].0, u, var.clone()));
                }
            }
        }
    }
    out
}
