//! The four message-passing layers, recorded on a tape.
//!
//! Node features are rows; weights are `d_in x d_out` and multiply from the
//! right. None of the layers carries a bias since every layer in the model
//! is followed by batch normalisation with its own shift.

use super::GraphBatch;
use crate::autodiff::{Tape, Var};
use crate::error::Result;

/// Slope of the LeakyReLU applied to attention logits.
pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

/// `D^-1/2 (A + I) D^-1/2 H W`.
pub fn gcn_layer(tape: &mut Tape, h: Var, w: Var, g: &GraphBatch) -> Result<Var> {
    let hw = tape.matmul(h, w)?;
    let msgs = tape.gather_rows(hw, &g.loop_src)?;
    let coef = tape.leaf(g.gcn_coef.clone());
    let scaled = tape.scale_rows(msgs, coef)?;
    tape.segment_sum(scaled, &g.loop_dst, g.total_nodes())
}

/// Single-head attention weights `alpha` over self-looped edges
/// (`g.loop_src -> g.loop_dst`) together with the transformed features.
///
/// `att` is `d_out x 2`: column 0 scores the receiving node, column 1 the
/// sending node, i.e. the two halves of the attention vector applied to
/// `[W h_i || W h_j]`.
pub fn gat_attention(tape: &mut Tape, h: Var, w: Var, att: Var, g: &GraphBatch) -> Result<(Var, Var)> {
    let n = g.total_nodes();
    let wh = tape.matmul(h, w)?;
    let scores = tape.matmul(wh, att)?;
    let scores = tape.reshape(scores, &[2 * n])?;
    let dst_pos: Vec<usize> = g.loop_dst.iter().map(|&d| 2 * d).collect();
    let src_pos: Vec<usize> = g.loop_src.iter().map(|&s| 2 * s + 1).collect();
    let e_dst = tape.gather_rows(scores, &dst_pos.into())?;
    let e_src = tape.gather_rows(scores, &src_pos.into())?;
    let logits = tape.add(e_dst, e_src)?;
    let logits = tape.leaky_relu(logits, GAT_NEGATIVE_SLOPE);
    let alpha = tape.segment_softmax(logits, &g.loop_dst, n)?;
    Ok((alpha, wh))
}

/// `h'_i = sum_j alpha_ij W h_j` over `j in N(i) + {i}`.
pub fn gat_layer(tape: &mut Tape, h: Var, w: Var, att: Var, g: &GraphBatch) -> Result<Var> {
    let (alpha, wh) = gat_attention(tape, h, w, att, g)?;
    let msgs = tape.gather_rows(wh, &g.loop_src)?;
    let weighted = tape.scale_rows(msgs, alpha)?;
    tape.segment_sum(weighted, &g.loop_dst, g.total_nodes())
}

/// `h'_i = W_self h_i + W_neigh mean_{j in N(i)} h_j`, zero mean for
/// isolated nodes.
pub fn sage_layer(tape: &mut Tape, h: Var, w_self: Var, w_neigh: Var, g: &GraphBatch) -> Result<Var> {
    let msgs = tape.gather_rows(h, &g.src)?;
    let summed = tape.segment_sum(msgs, &g.dst, g.total_nodes())?;
    let inv_deg = tape.leaf(g.inv_degree.clone());
    let mean = tape.scale_rows(summed, inv_deg)?;
    let own = tape.matmul(h, w_self)?;
    let neigh = tape.matmul(mean, w_neigh)?;
    tape.add(own, neigh)
}

/// `h'_i = W_root h_i + W_neigh sum_{j in N(i)} h_j`.
pub fn graphconv_layer(tape: &mut Tape, h: Var, w_root: Var, w_neigh: Var, g: &GraphBatch) -> Result<Var> {
    let msgs = tape.gather_rows(h, &g.src)?;
    let summed = tape.segment_sum(msgs, &g.dst, g.total_nodes())?;
    let own = tape.matmul(h, w_root)?;
    let neigh = tape.matmul(summed, w_neigh)?;
    tape.add(own, neigh)
}
