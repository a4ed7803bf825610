//! Interventional Tree SHAP.
//!
//! For a fixed background row `z`, each leaf is reached by the hybrid of
//! `x` and `z` only for coalitions that contain every feature whose split
//! followed `x` against `z` (set A) and none of those that followed `z`
//! against `x` (set B). That leaf's game has closed-form Shapley values:
//! `v (a-1)! b! / (a+b)!` for members of A and `-v a! (b-1)! / (a+b)!` for
//! members of B. Summing over the reachable leaves of one traversal gives
//! exact values for the pair, which are then averaged over the background
//! and the trees.

use crate::forest::{Node, Tree};

use super::exact::binomial;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Side {
    Free,
    X,
    Z,
}

struct Walk<'a> {
    nodes: &'a [Node],
    x: &'a [f64],
    z: &'a [f64],
    leaf_value: &'a dyn Fn(&Node) -> f64,
    side: Vec<Side>,
    in_a: Vec<usize>,
    in_b: Vec<usize>,
    phi: &'a mut [f64],
}

impl Walk<'_> {
    fn visit(&mut self, i: usize) {
        let node = &self.nodes[i];
        if node.is_leaf() {
            let (a, b) = (self.in_a.len(), self.in_b.len());
            if a + b == 0 {
                return;
            }
            let v = (self.leaf_value)(node);
            if a > 0 {
                // (a-1)! b! / (a+b)!
                let w = 1.0 / (a as f64 * binomial(a + b, b));
                for &f in &self.in_a {
                    self.phi[f] += v * w;
                }
            }
            if b > 0 {
                let w = 1.0 / (b as f64 * binomial(a + b, a));
                for &f in &self.in_b {
                    self.phi[f] -= v * w;
                }
            }
            return;
        }
        let f = node.feature as usize;
        let child = |value: f64| {
            if value < node.threshold {
                node.left as usize
            } else {
                node.right as usize
            }
        };
        let (cx, cz) = (child(self.x[f]), child(self.z[f]));
        if cx == cz {
            self.visit(cx);
            return;
        }
        match self.side[f] {
            Side::X => self.visit(cx),
            Side::Z => self.visit(cz),
            Side::Free => {
                self.side[f] = Side::X;
                self.in_a.push(f);
                self.visit(cx);
                self.in_a.pop();
                self.side[f] = Side::Z;
                self.in_b.push(f);
                self.visit(cz);
                self.in_b.pop();
                self.side[f] = Side::Free;
            }
        }
    }
}

/// Adds the exact Shapley values of `tree` for the pair `(x, z)` to `phi`.
pub(crate) fn accumulate_pair(
    tree: &Tree,
    x: &[f64],
    z: &[f64],
    leaf_value: &dyn Fn(&Node) -> f64,
    phi: &mut [f64],
) {
    let mut walk = Walk {
        nodes: &tree.nodes,
        x,
        z,
        leaf_value,
        side: vec![Side::Free; x.len()],
        in_a: Vec::new(),
        in_b: Vec::new(),
        phi,
    };
    walk.visit(0);
}
