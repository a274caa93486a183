use super::{fc_to_conv, lower_gelu, lower_groupnorm, serialize_conv, GeluParams, GeluVariant, GroupNormVariant, PassReport};
use super::serialize::choose_serialization;
use crate::delegation::{admit, CapabilityProfile, CostModel, RejectReason};
use crate::error::Result;
use crate::graph::{infer_shapes, Graph, Op};

/// What a stock converter emits for the composites: rank-5 GroupNorm with
/// BroadcastTo and the unclipped GELU.
pub fn converter_baseline(g: &Graph) -> Result<Graph> {
    let (g, _) = lower_groupnorm(g, GroupNormVariant::Naive)?;
    let (g, _) = lower_gelu(&g, GeluVariant::Naive, GeluParams::default())?;
    Ok(g)
}

/// Broadcast-free GroupNorm, stable GELU, FC to Conv2D, then serialization of
/// every Conv2D the profile rejects only for its activation size. Reports
/// are returned for the passes that changed the graph.
pub fn run_pipeline(g: &Graph, profile: &CapabilityProfile, cost: &CostModel) -> Result<(Graph, Vec<PassReport>)> {
    let mut reports = Vec::new();
    let keep = |(g, r): (Graph, PassReport), reports: &mut Vec<PassReport>| {
        if !r.noop {
            reports.push(r);
        }
        g
    };
    let g = infer_shapes(g)?;
    let g = keep(lower_groupnorm(&g, GroupNormVariant::BroadcastFree)?, &mut reports);
    let g = keep(lower_gelu(&g, GeluVariant::Stable, GeluParams::default())?, &mut reports);
    let g = keep(fc_to_conv(&g)?, &mut reports);
    let (g, serial) = serialize_oversized(&g, profile, cost)?;
    reports.extend(serial);
    Ok((g, reports))
}

/// Serializes every Conv2D that `profile` rejects only because of its
/// activation I/O, along the dimension [`choose_serialization`] picks.
pub fn serialize_oversized(g: &Graph, profile: &CapabilityProfile, cost: &CostModel) -> Result<(Graph, Vec<PassReport>)> {
    let mut g = infer_shapes(g)?;
    let mut reports = Vec::new();
    let oversized: Vec<String> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.op, Op::Conv2D { .. }))
        .filter(|n| {
            let a = admit(&g, n, profile);
            !a.admitted && a.reasons.iter().all(|r| matches!(r, RejectReason::IoBudget { .. }))
        })
        .map(|n| n.id.clone())
        .collect();
    for id in oversized {
        let (dim, k) = choose_serialization(&g, &id, profile, cost)?;
        let (next, r) = serialize_conv(&g, &id, dim, k)?;
        g = next;
        if !r.noop {
            reports.push(r);
        }
    }
    Ok((g, reports))
}
