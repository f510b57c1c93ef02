//! Snapshot loading and line-level diffing.
//!
//! A patch is described by two materialized directory trees, the repository
//! before and after the commit. Only C sources and headers are read.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use crate::error::{Error, Result};

/// Which side of a patch a snapshot holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Pre,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RepoSnapshot {
    pub root: PathBuf,
    pub side: Side,
    /// Relative path (forward slashes) to the file's lines.
    pub files: BTreeMap<String, Vec<String>>,
}

impl RepoSnapshot {
    pub fn new(root: impl Into<PathBuf>, side: Side) -> Self {
        Self {
            root: root.into(),
            side,
            files: BTreeMap::new(),
        }
    }

    /// Builds an in-memory snapshot from `(path, text)` pairs.
    pub fn from_sources<P, T>(side: Side, sources: impl IntoIterator<Item = (P, T)>) -> Self
    where
        P: Into<String>,
        T: AsRef<str>,
    {
        let files = sources
            .into_iter()
            .map(|(p, t)| (p.into(), split_lines(t.as_ref())))
            .collect();
        Self {
            root: PathBuf::new(),
            side,
            files,
        }
    }

    pub fn lines(&self, path: &str) -> Option<&[String]> {
        self.files.get(path).map(Vec::as_slice)
    }
}

/// Splits text on `\n`, dropping a trailing `\r` from each line.
pub fn split_lines(text: &str) -> Vec<String> {
    text.lines().map(str::to_owned).collect()
}

fn is_c_source(path: &Path) -> bool {
    matches!(path.extension().and_then(|e| e.to_str()), Some("c") | Some("h"))
}

pub fn load_snapshot(root: impl AsRef<Path>, side: Side) -> Result<RepoSnapshot> {
    let root = root.as_ref();
    let meta = fs::metadata(root).map_err(|e| Error::io(root, e))?;
    if !meta.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotADirectory, "not a directory"),
        ));
    }
    let mut snapshot = RepoSnapshot::new(root, side);
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(root).to_path_buf();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() || !is_c_source(entry.path()) {
            continue;
        }
        let bytes = fs::read(entry.path()).map_err(|e| Error::io(entry.path(), e))?;
        let Ok(text) = String::from_utf8(bytes) else {
            warn!("skipping non-text file {}", entry.path().display());
            continue;
        };
        let rel = entry
            .path()
            .strip_prefix(root)
            .expect("walkdir yields paths under root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/");
        snapshot.files.insert(rel, split_lines(&text));
    }
    Ok(snapshot)
}

/// Reads a newline-separated list of relative paths, ignoring blank lines.
pub fn read_changed_paths(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_owned)
        .collect())
}

/// One line number plus its text; line numbers are 1-based.
pub type NumberedLine = (u32, String);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LineDiff {
    pub deleted: Vec<NumberedLine>,
    pub added: Vec<NumberedLine>,
    /// Matched `(pre_line, post_line)` pairs, strictly increasing in both.
    pub line_map: Vec<(u32, u32)>,
}

impl LineDiff {
    pub fn pre_to_post(&self, pre_line: u32) -> Option<u32> {
        self.line_map
            .binary_search_by_key(&pre_line, |&(a, _)| a)
            .ok()
            .map(|i| self.line_map[i].1)
    }
}

/// Longest-common-subsequence line diff under exact string equality.
///
/// Among several longest subsequences the one matching lines earliest in
/// `pre` is chosen.
pub fn diff_lines<S: AsRef<str>>(pre: &[S], post: &[S]) -> LineDiff {
    let n = pre.len();
    let m = post.len();
    let prefix = pre
        .iter()
        .zip(post)
        .take_while(|(a, b)| a.as_ref() == b.as_ref())
        .count();

    let a = &pre[prefix..];
    let b = &post[prefix..];
    let (rn, rm) = (a.len(), b.len());
    // suffix[i][j] = LCS length of a[i..] and b[j..]
    let width = rm + 1;
    let mut suffix = vec![0u32; (rn + 1) * width];
    for i in (0..rn).rev() {
        for j in (0..rm).rev() {
            suffix[i * width + j] = if a[i].as_ref() == b[j].as_ref() {
                suffix[(i + 1) * width + j + 1] + 1
            } else {
                suffix[(i + 1) * width + j].max(suffix[i * width + j + 1])
            };
        }
    }

    let mut line_map: Vec<(u32, u32)> = (1..=prefix as u32).map(|k| (k, k)).collect();
    let (mut i, mut j) = (0, 0);
    while i < rn && j < rm {
        if a[i].as_ref() == b[j].as_ref() {
            line_map.push(((prefix + i + 1) as u32, (prefix + j + 1) as u32));
            i += 1;
            j += 1;
        } else if suffix[i * width + j + 1] >= suffix[(i + 1) * width + j] {
            // Skipping the post line keeps pre line i available for an earlier match.
            j += 1;
        } else {
            i += 1;
        }
    }

    let mapped_pre: BTreeSet<u32> = line_map.iter().map(|&(p, _)| p).collect();
    let mapped_post: BTreeSet<u32> = line_map.iter().map(|&(_, q)| q).collect();
    let deleted = (1..=n as u32)
        .filter(|k| !mapped_pre.contains(k))
        .map(|k| (k, pre[k as usize - 1].as_ref().to_owned()))
        .collect();
    let added = (1..=m as u32)
        .filter(|k| !mapped_post.contains(k))
        .map(|k| (k, post[k as usize - 1].as_ref().to_owned()))
        .collect();
    LineDiff {
        deleted,
        added,
        line_map,
    }
}

/// Rebuilds the post-patch lines from the pre-patch lines and a diff.
pub fn apply_diff<S: AsRef<str>>(pre: &[S], diff: &LineDiff) -> Vec<String> {
    let post_len = diff.line_map.len() + diff.added.len();
    let mut out: Vec<Option<String>> = vec![None; post_len];
    for &(p, q) in &diff.line_map {
        out[q as usize - 1] = Some(pre[p as usize - 1].as_ref().to_owned());
    }
    for (q, text) in &diff.added {
        out[*q as usize - 1] = Some(text.clone());
    }
    out.into_iter()
        .map(|l| l.expect("diff covers every post line"))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileChange {
    pub path: String,
    pub diff: LineDiff,
}

impl FileChange {
    pub fn deleted(&self) -> &[NumberedLine] {
        &self.diff.deleted
    }

    pub fn added(&self) -> &[NumberedLine] {
        &self.diff.added
    }

    pub fn line_map(&self) -> &[(u32, u32)] {
        &self.diff.line_map
    }
}

#[derive(Debug, Clone)]
pub struct ChangeSet<'a> {
    pub changes: Vec<FileChange>,
    pub pre: &'a RepoSnapshot,
    pub post: &'a RepoSnapshot,
}

impl ChangeSet<'_> {
    pub fn is_empty(&self) -> bool {
        self.changes.is_empty()
    }
}

/// Diffs the given paths, or every path whose content differs when
/// `changed_paths` is `None`. Paths with identical content are left out.
pub fn resolve_change_set<'a>(
    pre: &'a RepoSnapshot,
    post: &'a RepoSnapshot,
    changed_paths: Option<&[String]>,
) -> Result<ChangeSet<'a>> {
    let candidates: Vec<String> = match changed_paths {
        Some(paths) => {
            for p in paths {
                if !pre.files.contains_key(p) && !post.files.contains_key(p) {
                    return Err(Error::UnknownChangedPath(p.clone()));
                }
            }
            let unique: BTreeSet<&String> = paths.iter().collect();
            unique.into_iter().cloned().collect()
        }
        None => pre
            .files
            .keys()
            .chain(post.files.keys())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .cloned()
            .collect(),
    };

    let empty: Vec<String> = Vec::new();
    let changes = candidates
        .into_iter()
        .filter_map(|path| {
            let a = pre.files.get(&path).unwrap_or(&empty);
            let b = post.files.get(&path).unwrap_or(&empty);
            let same_presence = pre.files.contains_key(&path) == post.files.contains_key(&path);
            if a == b && same_presence {
                return None;
            }
            Some(FileChange {
                diff: diff_lines(a, b),
                path,
            })
        })
        .collect();
    Ok(ChangeSet { changes, pre, post })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(items: &[&str]) -> Vec<String> {
        items.iter().map(|s| s.to_string()).collect()
    }

    /// Every common subsequence as index pairs; exponential, tiny inputs only.
    fn all_common_subsequences(a: &[String], b: &[String]) -> Vec<Vec<(u32, u32)>> {
        fn go(
            a: &[String],
            b: &[String],
            i: usize,
            j: usize,
            cur: &mut Vec<(u32, u32)>,
            out: &mut Vec<Vec<(u32, u32)>>,
        ) {
            out.push(cur.clone());
            for ii in i..a.len() {
                for jj in j..b.len() {
                    if a[ii] == b[jj] {
                        cur.push((ii as u32 + 1, jj as u32 + 1));
                        go(a, b, ii + 1, jj + 1, cur, out);
                        cur.pop();
                    }
                }
            }
        }
        let mut out = Vec::new();
        go(a, b, 0, 0, &mut Vec::new(), &mut out);
        out
    }

    fn longest(a: &[String], b: &[String]) -> Vec<Vec<(u32, u32)>> {
        let all = all_common_subsequences(a, b);
        let best = all.iter().map(Vec::len).max().unwrap_or(0);
        let mut best_sets: Vec<_> = all.into_iter().filter(|s| s.len() == best).collect();
        best_sets.sort();
        best_sets.dedup();
        best_sets
    }

    #[test]
    fn single_substitution() {
        let d = diff_lines(&v(&["a", "b"]), &v(&["a", "c"]));
        assert_eq!(d.deleted, vec![(2, "b".to_string())]);
        assert_eq!(d.added, vec![(2, "c".to_string())]);
        assert_eq!(d.line_map, vec![(1, 1)]);
    }

    #[test]
    fn identity_diff() {
        let x = v(&["int a;", "", "a = 1;"]);
        let d = diff_lines(&x, &x);
        assert!(d.deleted.is_empty() && d.added.is_empty());
        assert_eq!(d.line_map, vec![(1, 1), (2, 2), (3, 3)]);
    }

    #[test]
    fn unique_lcs_against_brute_force() {
        let pre = v(&["a", "b", "c"]);
        let post = v(&["b"]);
        let brute = longest(&pre, &post);
        assert_eq!(brute, vec![vec![(2, 1)]]);
        let d = diff_lines(&pre, &post);
        assert_eq!(d.line_map, brute[0]);
        assert_eq!(d.deleted, vec![(1, "a".into()), (3, "c".into())]);
        assert!(d.added.is_empty());
    }

    #[test]
    fn tie_prefers_earlier_pre_match() {
        let d = diff_lines(&v(&["a", "b"]), &v(&["b", "a"]));
        assert_eq!(d.line_map, vec![(1, 2)]);
        let d = diff_lines(&v(&["b", "a", "c", "a"]), &v(&["a"]));
        assert_eq!(d.line_map, vec![(2, 1)]);
    }

    #[test]
    fn change_set_cases() {
        let pre = RepoSnapshot::from_sources(Side::Pre, [("a.c", "x\ny\n"), ("b.c", "z\n")]);
        let same = RepoSnapshot::from_sources(Side::Post, [("a.c", "x\ny\n"), ("b.c", "z\n")]);
        assert!(resolve_change_set(&pre, &same, None).unwrap().is_empty());

        let post = RepoSnapshot::from_sources(
            Side::Post,
            [("a.c", "x\nY\n"), ("b.c", "z\n"), ("new.c", "1\n2\n")],
        );
        let cs = resolve_change_set(&pre, &post, None).unwrap();
        assert_eq!(cs.changes.len(), 2);
        assert_eq!(cs.changes[0].path, "a.c");
        let added = &cs.changes[1];
        assert_eq!(added.path, "new.c");
        assert!(added.deleted().is_empty() && added.line_map().is_empty());
        assert_eq!(added.added().len(), 2);

        let explicit = resolve_change_set(&pre, &post, Some(&["b.c".into()])).unwrap();
        assert!(explicit.is_empty());
        let err = resolve_change_set(&pre, &post, Some(&["nope.c".into()])).unwrap_err();
        assert!(err.to_string().contains("nope.c"));
    }

    #[test]
    fn load_snapshot_filters_suffixes() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_snapshot(dir.path(), Side::Pre).unwrap().files.is_empty());
        fs::write(dir.path().join("a.c"), "int a;\nint b;\nint c;\n").unwrap();
        fs::write(dir.path().join("README.md"), "# hi\n").unwrap();
        fs::create_dir(dir.path().join("inc")).unwrap();
        fs::write(dir.path().join("inc/x.h"), "#define X 1\n").unwrap();
        fs::write(dir.path().join("bin.c"), [0xffu8, 0xfe, 0x00]).unwrap();
        let s = load_snapshot(dir.path(), Side::Pre).unwrap();
        assert_eq!(s.files.keys().collect::<Vec<_>>(), vec!["a.c", "inc/x.h"]);
        assert_eq!(s.files["a.c"].len(), 3);
        assert!(load_snapshot(dir.path().join("missing"), Side::Pre).is_err());
    }

    fn lines_strategy() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..9)
            .prop_map(|v| v.into_iter().map(String::from).collect())
    }

    proptest! {
        #[test]
        fn diff_invariants(pre in lines_strategy(), post in lines_strategy()) {
            let d = diff_lines(&pre, &post);
            prop_assert_eq!(d.line_map.len() + d.deleted.len(), pre.len());
            prop_assert_eq!(d.line_map.len() + d.added.len(), post.len());
            prop_assert!(d.line_map.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            for &(p, q) in &d.line_map {
                prop_assert_eq!(&pre[p as usize - 1], &post[q as usize - 1]);
            }
            prop_assert_eq!(apply_diff(&pre, &d), post.clone());

            let best = longest(&pre, &post);
            prop_assert_eq!(d.line_map.len(), best[0].len());

            // Swapping inputs swaps the roles; the transposed map is exact
            // whenever the longest common subsequence is unique.
            let s = diff_lines(&post, &pre);
            prop_assert_eq!(s.deleted.len(), d.added.len());
            prop_assert_eq!(s.added.len(), d.deleted.len());
            if best.len() == 1 {
                let transposed: Vec<_> = d.line_map.iter().map(|&(p, q)| (q, p)).collect();
                prop_assert_eq!(s.line_map, transposed);
                prop_assert_eq!(s.deleted, d.added);
            }
        }
    }
}
