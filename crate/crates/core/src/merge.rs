//! Graph-based merging of fragmented OCR text boxes.
//!
//! Two boxes are adjacent when their minimum distance is at most `tau`
//! pixels. Connected components of the adjacency graph are merged into one
//! element whose box is the union of the members and whose text is the
//! members' text joined with single spaces in reading order (top-to-bottom,
//! then left-to-right).
//!
//! Only `text` elements take part; charts, tables and other layout regions
//! pass through untouched.

use std::collections::BTreeSet;

use rayon::prelude::*;
use thiserror::Error;

use crate::document::{BoundingBox, Document, Element, Page};

/// Default adjacency threshold in pixels.
pub const DEFAULT_TAU: f64 = 15.0;

#[derive(Debug, Error, PartialEq)]
pub enum MergeError {
    #[error("elements span several pages ({first} and {other}); merge one page at a time")]
    MixedPages { first: u32, other: u32 },
    #[error("tau must be a finite non-negative number of pixels, got {0}")]
    InvalidTau(f64),
}

/// Gap between two intervals on one axis; 0 when they overlap or touch.
fn axis_gap(a1: u32, a2: u32, b1: u32, b2: u32) -> f64 {
    if a1 <= b2 && b1 <= a2 {
        0.0
    } else {
        let d1 = (i64::from(a2) - i64::from(b1)).abs();
        let d2 = (i64::from(b2) - i64::from(a1)).abs();
        d1.min(d2) as f64
    }
}

/// Minimum Euclidean distance between two boxes, in pixels.
pub fn min_box_distance(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let dh = axis_gap(a.x1, a.x2, b.x1, b.x2);
    let dv = axis_gap(a.y1, a.y2, b.y1, b.y2);
    dh.hypot(dv)
}

/// Undirected graph over box indices (0-based).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyGraph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl AdjacencyGraph {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            edges: BTreeSet::new(),
            neighbors: vec![Vec::new(); n],
        }
    }

    /// Adds the undirected edge `{i, j}`. Self-edges are ignored.
    pub fn add_edge(&mut self, i: usize, j: usize) {
        assert!(i < self.n && j < self.n, "edge ({i}, {j}) out of range for n={}", self.n);
        if i == j {
            return;
        }
        let key = (i.min(j), i.max(j));
        if self.edges.insert(key) {
            self.neighbors[i].push(j);
            self.neighbors[j].push(i);
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Edges as `(i, j)` with `i < j`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }
}

/// Connects every pair of boxes whose minimum distance is `<= tau`.
pub fn build_adjacency(boxes: &[BoundingBox], tau: f64) -> AdjacencyGraph {
    let mut g = AdjacencyGraph::new(boxes.len());
    for i in 0..boxes.len() {
        for j in i + 1..boxes.len() {
            if min_box_distance(&boxes[i], &boxes[j]) <= tau {
                g.add_edge(i, j);
            }
        }
    }
    g
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MergeComponent {
    /// Member indices, ascending.
    pub members: Vec<usize>,
    /// Members sorted by `(y1, x1)`, ties by index.
    pub reading_order: Vec<usize>,
}

/// Finds connected components by depth-first search.
///
/// Components come out ordered by their smallest member.
pub fn connected_components(g: &AdjacencyGraph, boxes: &[BoundingBox]) -> Vec<MergeComponent> {
    assert_eq!(g.len(), boxes.len(), "graph and box list disagree on size");
    let mut visited = vec![false; g.len()];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    for start in 0..g.len() {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let mut members = Vec::new();
        while let Some(v) = stack.pop() {
            members.push(v);
            for &w in &g.neighbors[v] {
                if !visited[w] {
                    visited[w] = true;
                    stack.push(w);
                }
            }
        }
        members.sort_unstable();
        let mut reading_order = members.clone();
        reading_order.sort_by_key(|&i| (boxes[i].y1, boxes[i].x1, i));
        out.push(MergeComponent {
            members,
            reading_order,
        });
    }
    out
}

/// Merges adjacent text fragments on a single page.
///
/// Output order follows the smallest input position of each output element,
/// so unmerged elements keep their relative order.
pub fn merge_elements(elements: &[Element], tau: f64) -> Result<Vec<Element>, MergeError> {
    if !tau.is_finite() || tau < 0.0 {
        return Err(MergeError::InvalidTau(tau));
    }
    if let Some(first) = elements.first() {
        if let Some(other) = elements.iter().find(|e| e.page_index != first.page_index) {
            return Err(MergeError::MixedPages {
                first: first.page_index,
                other: other.page_index,
            });
        }
    }

    let text_positions: Vec<usize> = elements
        .iter()
        .enumerate()
        .filter(|(_, e)| e.etype.is_text())
        .map(|(i, _)| i)
        .collect();
    let boxes: Vec<BoundingBox> = text_positions.iter().map(|&i| elements[i].bbox).collect();
    let graph = build_adjacency(&boxes, tau);

    // (anchor position in input, element)
    let mut out: Vec<(usize, Element)> = elements
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.etype.is_text())
        .map(|(i, e)| (i, e.clone()))
        .collect();

    for comp in connected_components(&graph, &boxes) {
        let anchor = text_positions[comp.members[0]];
        if comp.members.len() == 1 {
            out.push((anchor, elements[anchor].clone()));
            continue;
        }
        let ordered: Vec<&Element> = comp
            .reading_order
            .iter()
            .map(|&k| &elements[text_positions[k]])
            .collect();
        let bbox = ordered
            .iter()
            .skip(1)
            .fold(ordered[0].bbox, |acc, e| acc.union(&e.bbox));
        let text = ordered
            .iter()
            .map(|e| e.verbatim.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let sources: Vec<String> = ordered
            .iter()
            .flat_map(|e| {
                if e.sources.is_empty() {
                    vec![e.element_id.clone()]
                } else {
                    e.sources.clone()
                }
            })
            .collect();
        let id = ordered
            .iter()
            .map(|e| e.element_id.as_str())
            .collect::<Vec<_>>()
            .join("+");
        let mut merged = Element::new(id, ordered[0].page_index, ordered[0].etype.clone(), bbox, text);
        merged.sources = sources;
        out.push((anchor, merged));
    }

    out.sort_by_key(|(anchor, _)| *anchor);
    Ok(out.into_iter().map(|(_, e)| e).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MergeStats {
    pub elements_before: usize,
    pub elements_after: usize,
}

/// Merges every page of a document; pages are processed in parallel.
pub fn merge_document(doc: &Document, tau: f64) -> Result<(Document, MergeStats), MergeError> {
    let pages: Vec<Page> = doc
        .pages
        .par_iter()
        .map(|page| {
            Ok(Page {
                elements: merge_elements(&page.elements, tau)?,
                ..page.clone()
            })
        })
        .collect::<Result<_, MergeError>>()?;
    let stats = MergeStats {
        elements_before: doc.element_count(),
        elements_after: pages.iter().map(|p| p.elements.len()).sum(),
    };
    Ok((
        Document {
            pages,
            ..doc.clone()
        },
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::ElementType;

    fn b(x1: u32, y1: u32, x2: u32, y2: u32) -> BoundingBox {
        BoundingBox::new(x1, y1, x2, y2)
    }

    fn text(id: &str, s: &str, bb: BoundingBox) -> Element {
        Element::new(id, 1, ElementType::Text, bb, s)
    }

    #[test]
    fn distance_examples() {
        assert_eq!(min_box_distance(&b(0, 0, 10, 10), &b(12, 0, 22, 10)), 2.0);
        assert_eq!(min_box_distance(&b(0, 0, 10, 10), &b(3, 3, 7, 7)), 0.0);
        let d = min_box_distance(&b(0, 0, 10, 10), &b(20, 20, 30, 30));
        assert!((d - 200f64.sqrt()).abs() < 1e-12);
        assert!((d - 14.1421).abs() < 1e-4);
    }

    #[test]
    fn touching_boxes_have_zero_distance() {
        assert_eq!(min_box_distance(&b(0, 0, 10, 10), &b(10, 10, 20, 20)), 0.0);
    }

    #[test]
    fn adjacency_of_three_boxes() {
        let boxes = [b(0, 0, 10, 10), b(12, 0, 22, 10), b(20, 20, 30, 30)];
        let g = build_adjacency(&boxes, 15.0);
        // d(1,2)=2, d(1,3)=sqrt(200), d(2,3)=10 (x ranges overlap)
        assert_eq!(g.edges().collect::<Vec<_>>(), vec![(0, 1), (0, 2), (1, 2)]);
        assert_eq!(min_box_distance(&boxes[1], &boxes[2]), 10.0);
    }

    #[test]
    fn single_box_has_no_edges() {
        assert_eq!(build_adjacency(&[b(0, 0, 1, 1)], 15.0).edges().count(), 0);
    }

    #[test]
    fn zero_tau_separates_one_pixel_gap() {
        let g = build_adjacency(&[b(0, 0, 10, 10), b(11, 0, 20, 10)], 0.0);
        assert_eq!(g.edges().count(), 0);
    }

    #[test]
    fn threshold_is_inclusive() {
        let g = build_adjacency(&[b(0, 0, 10, 10), b(25, 0, 30, 10)], 15.0);
        assert!(g.has_edge(0, 1));
    }

    #[test]
    fn components_follow_transitive_closure() {
        let boxes = vec![b(0, 0, 1, 1); 4];
        let mut g = AdjacencyGraph::new(4);
        g.add_edge(0, 1);
        g.add_edge(1, 2);
        let comps = connected_components(&g, &boxes);
        assert_eq!(comps.len(), 2);
        assert_eq!(comps[0].members, vec![0, 1, 2]);
        assert_eq!(comps[1].members, vec![3]);
    }

    #[test]
    fn no_edges_gives_singletons() {
        let boxes = vec![b(0, 0, 1, 1); 3];
        let comps = connected_components(&AdjacencyGraph::new(3), &boxes);
        assert_eq!(
            comps.iter().map(|c| c.members.clone()).collect::<Vec<_>>(),
            vec![vec![0], vec![1], vec![2]]
        );
    }

    #[test]
    fn hello_world_merges() {
        let out = merge_elements(
            &[text("a", "Hello", b(0, 0, 10, 10)), text("b", "World", b(12, 0, 22, 10))],
            15.0,
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].verbatim, "Hello World");
        assert_eq!(out[0].bbox, b(0, 0, 22, 10));
        assert_eq!(out[0].element_id, "a+b");
        assert_eq!(out[0].sources, vec!["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn reading_order_is_top_then_left() {
        let out = merge_elements(
            &[
                text("c", "third", b(0, 12, 10, 20)),
                text("b", "second", b(12, 0, 22, 10)),
                text("a", "first", b(0, 0, 10, 10)),
            ],
            15.0,
        )
        .unwrap();
        assert_eq!(out[0].verbatim, "first second third");
        assert_eq!(out[0].element_id, "a+b+c");
    }

    #[test]
    fn single_text_element_unchanged() {
        let e = text("only", "alone", b(1, 2, 3, 4));
        assert_eq!(merge_elements(std::slice::from_ref(&e), 15.0).unwrap(), vec![e]);
    }

    #[test]
    fn non_text_elements_pass_through() {
        let chart = Element::new("c", 1, ElementType::Chart, b(0, 0, 50, 50), "");
        let out = merge_elements(
            &[
                text("a", "x", b(0, 0, 10, 10)),
                chart.clone(),
                text("b", "y", b(11, 0, 20, 10)),
            ],
            15.0,
        )
        .unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].element_id, "a+b");
        assert_eq!(out[1], chart);
    }

    #[test]
    fn mixed_pages_rejected() {
        let mut e2 = text("b", "y", b(0, 0, 1, 1));
        e2.page_index = 2;
        let err = merge_elements(&[text("a", "x", b(0, 0, 1, 1)), e2], 15.0).unwrap_err();
        assert_eq!(err, MergeError::MixedPages { first: 1, other: 2 });
    }

    #[test]
    fn negative_tau_rejected() {
        assert!(matches!(merge_elements(&[], -1.0), Err(MergeError::InvalidTau(_))));
    }
}
