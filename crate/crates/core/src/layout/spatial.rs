//! R-tree backed lookup of axis-aligned shapes.

use rstar::{RTree, RTreeObject, AABB};

use crate::geom::Rect;

#[derive(Clone, Debug)]
struct Entry<T> {
    rect: Rect,
    item: T,
}

impl<T> RTreeObject for Entry<T> {
    type Envelope = AABB<[i64; 2]>;

    fn envelope(&self) -> Self::Envelope {
        AABB::from_corners([self.rect.x0, self.rect.y0], [self.rect.x1, self.rect.y1])
    }
}

/// Read-only index of closed rectangles tagged with `T`.
#[derive(Clone, Debug)]
pub struct ShapeIndex<T> {
    tree: RTree<Entry<T>>,
}

impl<T: Copy> ShapeIndex<T> {
    pub fn new(items: impl IntoIterator<Item = (Rect, T)>) -> Self {
        let entries = items.into_iter().map(|(rect, item)| Entry { rect, item }).collect();
        ShapeIndex {
            tree: RTree::bulk_load(entries),
        }
    }

    /// All shapes whose closed rectangle intersects `r`.
    pub fn query(&self, r: &Rect) -> impl Iterator<Item = (Rect, T)> + '_ {
        let env = AABB::from_corners([r.x0, r.y0], [r.x1, r.y1]);
        self.tree
            .locate_in_envelope_intersecting(env)
            .map(|e| (e.rect, e.item))
    }

    pub fn len(&self) -> usize {
        self.tree.size()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.size() == 0
    }
}

/// Unions every pair of same-layer shapes that touch. `shapes` holds
/// `(metal layer, rect, node)` triples; a node may appear on several layers.
pub(crate) fn connect_shapes(num_nodes: usize, shapes: &[(u8, Rect, u32)]) -> super::union_find::UnionFind {
    let mut uf = super::union_find::UnionFind::new(num_nodes);
    let max_layer = shapes.iter().map(|s| s.0).max().unwrap_or(0);
    for layer in 1..=max_layer {
        let on_layer: Vec<(Rect, u32)> = shapes
            .iter()
            .filter(|s| s.0 == layer)
            .map(|s| (s.1, s.2))
            .collect();
        let index = ShapeIndex::new(on_layer.iter().copied());
        for (rect, node) in &on_layer {
            for (_, other) in index.query(rect) {
                uf.union(*node, other);
            }
        }
    }
    uf
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Point;

    #[test]
    fn query_is_inclusive_of_boundaries() {
        let idx = ShapeIndex::new([
            (Rect::new(Point::new(0, 0), Point::new(10, 0)), 0u32),
            (Rect::new(Point::new(20, 0), Point::new(20, 10)), 1),
        ]);
        let hits: Vec<u32> = idx.query(&Rect::point(Point::new(10, 0))).map(|h| h.1).collect();
        assert_eq!(hits, vec![0]);
        assert_eq!(idx.query(&Rect::point(Point::new(15, 0))).count(), 0);
    }

    #[test]
    fn crossing_segments_connect_only_on_same_layer() {
        let h = Rect::new(Point::new(0, 5), Point::new(10, 5));
        let v = Rect::new(Point::new(5, 0), Point::new(5, 10));
        let mut uf = connect_shapes(3, &[(1, h, 0), (1, v, 1), (2, v, 2)]);
        assert!(uf.same(0, 1));
        assert!(!uf.same(0, 2));
    }
}
