//! Single-head scaled dot-product attention on the tape.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId};

/// softmax(q k^T / sqrt(d) + mask) v
///
/// `attend_mask`, when present, is row-major `L_q x L_k`; `false` entries
/// are excluded by adding -1e9 to their logits before the softmax. A row
/// with no attendable key is a contract violation.
pub fn scaled_dot_attention(
    g: &mut Graph,
    queries: NodeId,
    keys: NodeId,
    values: NodeId,
    attend_mask: Option<&[bool]>,
) -> Result<NodeId> {
    let (lq, d) = g.dims(queries);
    let (lk, dk) = g.dims(keys);
    let (lv, _) = g.dims(values);
    if d != dk {
        return Err(Error::Shape { op: "attention", lhs: alloc::vec![lq, d], rhs: alloc::vec![lk, dk] });
    }
    if lv != lk {
        let (_, dv) = g.dims(values);
        return Err(Error::Shape { op: "attention", lhs: alloc::vec![lk, dk], rhs: alloc::vec![lv, dv] });
    }
    if d == 0 {
        return Err(Error::contract(String::from("attention over width-0 keys")));
    }
    let scores = g.matmul_nt(queries, keys)?;
    let scaled = g.scale(scores, 1.0 / libm::sqrt(d as f64))?;
    let logits = match attend_mask {
        None => scaled,
        Some(mask) => {
            if mask.len() != lq * lk {
                return Err(Error::Shape {
                    op: "attention-mask",
                    lhs: alloc::vec![lq, lk],
                    rhs: alloc::vec![1, mask.len()],
                });
            }
            for (i, row) in mask.chunks_exact(lk).enumerate() {
                if !row.iter().any(|&b| b) {
                    return Err(Error::contract(alloc::format!(
                        "attention row {i} has no attendable key"
                    )));
                }
            }
            let add: Vec<f64> = mask.iter().map(|&b| if b { 0.0 } else { -1e9 }).collect();
            let mask_node = g.constant_matrix(lq, lk, add)?;
            g.add(scaled, mask_node)?
        }
    };
    let probs = g.softmax_rows(logits)?;
    g.matmul(probs, values)
}
