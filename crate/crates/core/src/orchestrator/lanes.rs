//! Groups correction subtasks into lanes that must run in order.
//!
//! Attribute subtasks for one object share a lane, so later edits see
//! earlier ones. Spatial subtasks that share an object share a lane and run
//! in declaration order. Lanes are independent of each other.

use crate::scene::{ObjectRef, Subtask, SubtaskKind};

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut r = i;
    while parent[r] != r {
        r = parent[r];
    }
    let mut c = i;
    while parent[c] != r {
        let next = parent[c];
        parent[c] = r;
        c = next;
    }
    r
}

/// Lanes as subtask indices; counting subtasks are excluded. Lanes are
/// ordered by their first subtask, members by declaration order.
pub fn build_lanes(subtasks: &[Subtask]) -> Vec<Vec<usize>> {
    let n = subtasks.len();
    let mut parent: Vec<usize> = (0..n).collect();
    let keys: Vec<Option<(bool, Vec<ObjectRef>)>> = subtasks
        .iter()
        .map(|s| match &s.kind {
            SubtaskKind::Counting { .. } => None,
            SubtaskKind::Attribute(c) => Some((false, vec![c.object.clone()])),
            SubtaskKind::Spatial(c) => Some((true, vec![c.subject.clone(), c.object.clone()])),
        })
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            let (Some((si, oi)), Some((sj, oj))) = (&keys[i], &keys[j]) else {
                continue;
            };
            if si == sj && oi.iter().any(|o| oj.contains(o)) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[b.max(a)] = a.min(b);
                }
            }
        }
    }
    let mut lanes: Vec<(usize, Vec<usize>)> = Vec::new();
    for i in 0..n {
        if keys[i].is_none() {
            continue;
        }
        let root = find(&mut parent, i);
        match lanes.iter_mut().find(|(r, _)| *r == root) {
            Some((_, v)) => v.push(i),
            None => lanes.push((root, vec![i])),
        }
    }
    lanes.into_iter().map(|(_, v)| v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{AttributeConstraint, Relation, SpatialConstraint};

    #[test]
    fn lanes_group_by_object_and_kind() {
        let r = |n: &str, i| ObjectRef::new(n, i);
        let subtasks = vec![
            Subtask::counting("cat", 1),
            Subtask::attribute(AttributeConstraint::new(r("cat", 1), "red")),
            Subtask::attribute(AttributeConstraint::new(r("dog", 2), "blue")),
            Subtask::attribute(AttributeConstraint::new(r("cat", 1), "striped")),
            Subtask::spatial(
                0,
                SpatialConstraint {
                    subject: r("cat", 1),
                    relation: Relation::LeftOf,
                    object: r("dog", 2),
                },
            ),
            Subtask::spatial(
                1,
                SpatialConstraint {
                    subject: r("bird", 3),
                    relation: Relation::Above,
                    object: r("dog", 2),
                },
            ),
        ];
        assert_eq!(build_lanes(&subtasks), vec![vec![1, 3], vec![2], vec![4, 5]]);
    }
}
