use std::rc::Rc;

use crate::autodiff::{Indices, Tensor};
use crate::grid::EdgeIndex;

/// Message-passing indices for a batch of copies of one topology.
///
/// Node `b * n + i` is bus `i` of graph `b`; edge `(s, d)` carries a message
/// from `s` to `d`.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub graphs: usize,
    pub nodes_per_graph: usize,
    pub src: Indices,
    pub dst: Indices,
    /// Edges plus one self-loop per node.
    pub loop_src: Indices,
    pub loop_dst: Indices,
    /// `1/sqrt(d_s d_d)` per self-looped edge, degrees counting the loop.
    pub gcn_coef: Tensor,
    /// `1/deg` per node over neighbours only, 0 for isolated nodes.
    pub inv_degree: Tensor,
}

impl GraphBatch {
    pub fn new(edges: &EdgeIndex, nodes_per_graph: usize, graphs: usize) -> Self {
        let n = nodes_per_graph;
        let total = n * graphs;
        let mut src = Vec::with_capacity(edges.len() * graphs);
        let mut dst = Vec::with_capacity(edges.len() * graphs);
        for b in 0..graphs {
            for &(s, d) in &edges.pairs {
                debug_assert!(s < n && d < n);
                src.push(b * n + s);
                dst.push(b * n + d);
            }
        }
        let mut degree = vec![0usize; total];
        for &d in &dst {
            degree[d] += 1;
        }
        let mut loop_src = src.clone();
        let mut loop_dst = dst.clone();
        loop_src.extend(0..total);
        loop_dst.extend(0..total);
        let hat: Vec<f64> = degree.iter().map(|&k| (k + 1) as f64).collect();
        let gcn_coef = loop_src
            .iter()
            .zip(&loop_dst)
            .map(|(&s, &d)| 1.0 / (hat[s] * hat[d]).sqrt())
            .collect();
        let inv_degree = degree
            .iter()
            .map(|&k| if k == 0 { 0.0 } else { 1.0 / k as f64 })
            .collect();
        GraphBatch {
            graphs,
            nodes_per_graph: n,
            src: Rc::from(src),
            dst: Rc::from(dst),
            loop_src: Rc::from(loop_src),
            loop_dst: Rc::from(loop_dst),
            gcn_coef: Tensor::vector(gcn_coef),
            inv_degree: Tensor::vector(inv_degree),
        }
    }

    pub fn total_nodes(&self) -> usize {
        self.graphs * self.nodes_per_graph
    }
}
