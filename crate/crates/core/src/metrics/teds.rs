//! Structure-only TEDS: ordered tree edit distance (Zhang–Shasha) between
//! `table > tr > td` trees.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::geometry::TableStructure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NodeLabel {
    Table,
    Tr,
    Td { rowspan: usize, colspan: usize },
}

impl fmt::Display for NodeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            NodeLabel::Table => write!(f, "table"),
            NodeLabel::Tr => write!(f, "tr"),
            NodeLabel::Td { rowspan, colspan } => {
                write!(f, "td")?;
                if rowspan != 1 {
                    write!(f, "[rowspan={rowspan}]")?;
                }
                if colspan != 1 {
                    write!(f, "[colspan={colspan}]")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructTree {
    pub label: NodeLabel,
    pub children: Vec<StructTree>,
}

impl StructTree {
    pub fn leaf(label: NodeLabel) -> Self {
        StructTree {
            label,
            children: Vec::new(),
        }
    }

    pub fn node(label: NodeLabel, children: Vec<StructTree>) -> Self {
        StructTree { label, children }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(StructTree::size).sum::<usize>()
    }
}

impl fmt::Display for StructTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label)?;
        if !self.children.is_empty() {
            write!(f, "(")?;
            for (i, c) in self.children.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{c}")?;
            }
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// One `tr` per lattice row holding a `td` for every cell that starts in
/// that row, in column order. Rows a cell only spans through contribute no
/// `td` for it.
pub fn structure_to_tree(ts: &TableStructure) -> StructTree {
    let mut rows: Vec<Vec<(usize, StructTree)>> = vec![Vec::new(); ts.rows];
    for c in &ts.cells {
        rows[c.row_start].push((
            c.col_start,
            StructTree::leaf(NodeLabel::Td {
                rowspan: c.row_span(),
                colspan: c.col_span(),
            }),
        ));
    }
    let trs = rows
        .into_iter()
        .map(|mut tds| {
            tds.sort_by_key(|(c, _)| *c);
            StructTree::node(NodeLabel::Tr, tds.into_iter().map(|(_, t)| t).collect())
        })
        .collect();
    StructTree::node(NodeLabel::Table, trs)
}

/// Postorder flattening used by Zhang–Shasha.
struct Flat {
    labels: Vec<NodeLabel>,
    /// Postorder index of the leftmost leaf descendant of each node.
    leftmost: Vec<usize>,
    keyroots: Vec<usize>,
}

impl Flat {
    fn new(t: &StructTree) -> Self {
        fn walk(t: &StructTree, labels: &mut Vec<NodeLabel>, leftmost: &mut Vec<usize>) -> usize {
            let mut first_leaf = None;
            for c in &t.children {
                let l = walk(c, labels, leftmost);
                first_leaf.get_or_insert(l);
            }
            let me = labels.len();
            labels.push(t.label);
            let l = first_leaf.unwrap_or(me);
            leftmost.push(l);
            l
        }
        let mut labels = Vec::new();
        let mut leftmost = Vec::new();
        walk(t, &mut labels, &mut leftmost);
        // A keyroot is the highest node with a given leftmost leaf.
        let n = labels.len();
        let mut seen = vec![false; n];
        let mut keyroots = Vec::new();
        for i in (0..n).rev() {
            if !seen[leftmost[i]] {
                seen[leftmost[i]] = true;
                keyroots.push(i);
            }
        }
        keyroots.sort_unstable();
        Flat {
            labels,
            leftmost,
            keyroots,
        }
    }
}

/// Ordered tree edit distance with unit insert / delete costs and unit
/// relabel cost when labels differ.
pub fn tree_edit_distance(a: &StructTree, b: &StructTree) -> usize {
    let fa = Flat::new(a);
    let fb = Flat::new(b);
    let (na, nb) = (fa.labels.len(), fb.labels.len());
    let mut td = vec![0usize; na * nb];
    let mut fd = vec![0usize; (na + 1) * (nb + 1)];
    for &i in &fa.keyroots {
        for &j in &fb.keyroots {
            let (li, lj) = (fa.leftmost[i], fb.leftmost[j]);
            let w = j - lj + 2;
            // fd[(x, y)] is the distance between forests a[li..li+x) and
            // b[lj..lj+y).
            let at = |x: usize, y: usize| x * w + y;
            fd[at(0, 0)] = 0;
            for x in 1..=i - li + 1 {
                fd[at(x, 0)] = fd[at(x - 1, 0)] + 1;
            }
            for y in 1..=j - lj + 1 {
                fd[at(0, y)] = fd[at(0, y - 1)] + 1;
            }
            for x in 1..=i - li + 1 {
                let ai = li + x - 1;
                for y in 1..=j - lj + 1 {
                    let bj = lj + y - 1;
                    let del = fd[at(x - 1, y)] + 1;
                    let ins = fd[at(x, y - 1)] + 1;
                    if fa.leftmost[ai] == li && fb.leftmost[bj] == lj {
                        let sub = fd[at(x - 1, y - 1)] + (fa.labels[ai] != fb.labels[bj]) as usize;
                        let v = del.min(ins).min(sub);
                        fd[at(x, y)] = v;
                        td[ai * nb + bj] = v;
                    } else {
                        let px = fa.leftmost[ai] - li;
                        let py = fb.leftmost[bj] - lj;
                        let sub = fd[at(px, py)] + td[ai * nb + bj];
                        fd[at(x, y)] = del.min(ins).min(sub);
                    }
                }
            }
        }
    }
    td[(na - 1) * nb + (nb - 1)]
}

/// `1 - distance / max(|a|, |b|)`.
pub fn teds_struct(a: &StructTree, b: &StructTree) -> f64 {
    let d = tree_edit_distance(a, b) as f64;
    1.0 - d / a.size().max(b.size()) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CellSpan;

    fn td() -> StructTree {
        StructTree::leaf(NodeLabel::Td {
            rowspan: 1,
            colspan: 1,
        })
    }

    #[test]
    fn singletons_tree() {
        let t = structure_to_tree(&TableStructure::singletons(2, 2));
        assert_eq!(t.to_string(), "table(tr(td,td),tr(td,td))");
    }

    #[test]
    fn colspan_tree() {
        let ts = TableStructure::new(1, 2, vec![CellSpan::new(0, 0, 0, 1)]).unwrap();
        assert_eq!(
            structure_to_tree(&ts).to_string(),
            "table(tr(td[colspan=2]))"
        );
    }

    #[test]
    fn rowspan_leaves_empty_row() {
        let ts = TableStructure::new(2, 1, vec![CellSpan::new(0, 1, 0, 0)]).unwrap();
        assert_eq!(
            structure_to_tree(&ts).to_string(),
            "table(tr(td[rowspan=2]),tr)"
        );
    }

    #[test]
    fn identical_trees_score_one() {
        let t = structure_to_tree(&TableStructure::singletons(3, 4));
        assert_eq!(tree_edit_distance(&t, &t), 0);
        assert_eq!(teds_struct(&t, &t), 1.0);
    }

    #[test]
    fn one_insertion() {
        let a = StructTree::node(
            NodeLabel::Table,
            vec![StructTree::node(NodeLabel::Tr, vec![td()])],
        );
        let b = StructTree::node(
            NodeLabel::Table,
            vec![StructTree::node(NodeLabel::Tr, vec![td(), td()])],
        );
        assert_eq!(tree_edit_distance(&a, &b), 1);
        assert_eq!(teds_struct(&a, &b), 0.75);
    }

    #[test]
    fn disjoint_labels_score_zero() {
        let a = td();
        let b = StructTree::node(NodeLabel::Table, vec![StructTree::leaf(NodeLabel::Tr)]);
        assert_eq!(tree_edit_distance(&a, &b), 2);
        assert_eq!(teds_struct(&a, &b), 0.0);
    }
}
