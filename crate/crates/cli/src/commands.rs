use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use squeezepass_core::compression::{compress as run_compress, CalibrationConfig, CompressConfig, PruneSpec, QuantConfig};
use squeezepass_core::delegation::{estimate_cost, partition, CapabilityProfile, CostModel, PartitionReport};
use squeezepass_core::demo::{make_demo, DemoSpec};
use squeezepass_core::graph::{infer_shapes, load_graph, save_graph, structural_predicates, to_json_string, validate};
use squeezepass_core::interp::{compare_graphs, random_binding_set, EquivalenceReport, ExecMode, Tolerance};
use squeezepass_core::passes::{
    fc_to_conv, lower_gelu, lower_groupnorm, run_pipeline, serialize_oversized, GeluParams,
    GeluVariant, GroupNormVariant, PassReport,
};
use squeezepass_core::schedule::{compare_strategies, simulate, Scenario, Strategy, Timeline};
use squeezepass_core::{Graph, Op};

use crate::exit::{Code, Failure};
use crate::{invalid, Common, PassName, Size, StrategyArg};

type Outcome = Result<Code, Failure>;

/// Random inputs for equivalence checks are drawn from this range.
const INPUT_RANGE: (f32, f32) = (-3.0, 3.0);
const DEFAULT_MAX_ABS: f64 = 1e-5;
/// Used when a GELU composite was replaced by its tanh approximation.
const GELU_MAX_ABS: f64 = 2e-3;
const DEFAULT_MAX_REL: f64 = 1e-4;

fn print_json(v: &impl Serialize) {
    print_text(&serde_json::to_string_pretty(v).expect("reports serialize"));
}

/// Writes to stdout, ignoring a closed pipe (`| head`).
pub fn print_text(text: &str) {
    let _ = writeln!(io::stdout().lock(), "{text}");
}

fn load_profile(spec: &str) -> Result<CapabilityProfile, Failure> {
    let path = Path::new(spec);
    if path.exists() {
        return CapabilityProfile::load(path).map_err(|e| invalid(&format!("profile {spec}"), e));
    }
    match spec {
        "mobile-gpu" => Ok(CapabilityProfile::mobile_gpu()),
        "unlimited" => Ok(CapabilityProfile::unlimited()),
        _ => Err(Failure::validation(format!("profile {spec}: no such file or built-in profile"))),
    }
}

fn load_valid(path: &Path) -> Result<Graph, Failure> {
    let what = path.display().to_string();
    let g = load_graph(path).map_err(|e| invalid(&what, e))?;
    let diags = validate(&g);
    if !diags.is_empty() {
        let list: Vec<String> = diags.iter().map(ToString::to_string).collect();
        return Err(Failure::validation(format!("{what}: {}", list.join("; "))));
    }
    infer_shapes(&g).map_err(|e| invalid(&what, e))
}

fn tolerance(c: &Common, default_abs: f64) -> Result<Tolerance, Failure> {
    let t = Tolerance::new(c.max_abs.unwrap_or(default_abs), c.max_rel.unwrap_or(DEFAULT_MAX_REL));
    for (name, v) in [("--max-abs", t.max_abs), ("--max-rel", t.max_rel)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(Failure::validation(format!("{name} must be a non-negative number, got {v}")));
        }
    }
    Ok(t)
}

fn equivalence(c: &Common, a: &Graph, b: &Graph, tol: Tolerance) -> Result<EquivalenceReport, Failure> {
    let inputs = random_binding_set(a, c.seed, c.samples, INPUT_RANGE.0, INPUT_RANGE.1)?;
    Ok(compare_graphs(a, b, &inputs, ExecMode::from(c.mode), tol)?)
}

fn has_gelu(g: &Graph) -> bool {
    g.nodes.iter().any(|n| n.op == Op::Gelu)
}

fn apply(g: Graph, pass: PassName, profile: &CapabilityProfile, cost: &CostModel) -> Result<(Graph, Vec<PassReport>), Failure> {
    let single = |r: squeezepass_core::Result<(Graph, PassReport)>| r.map(|(g, r)| (g, vec![r]));
    let out = match pass {
        PassName::Pipeline => run_pipeline(&g, profile, cost),
        PassName::Groupnorm => single(lower_groupnorm(&g, GroupNormVariant::BroadcastFree)),
        PassName::GroupnormNaive => single(lower_groupnorm(&g, GroupNormVariant::Naive)),
        PassName::Gelu => single(lower_gelu(&g, GeluVariant::Stable, GeluParams::default())),
        PassName::GeluNaive => single(lower_gelu(&g, GeluVariant::Naive, GeluParams::default())),
        PassName::FcToConv => single(fc_to_conv(&g)),
        PassName::Serialize => serialize_oversized(&g, profile, cost),
    };
    Ok(out?)
}

fn partition_summary(g: &Graph, profile: &CapabilityProfile, cost: &CostModel) -> Result<(PartitionReport, f64), Failure> {
    let p = partition(g, profile)?;
    let c = estimate_cost(g, &p, cost)?;
    Ok((p, c))
}

fn describe(p: &PartitionReport) -> String {
    if p.complete {
        "complete".into()
    } else {
        let kinds: Vec<&str> = p.reason_kinds().into_iter().collect();
        format!("{} node(s) on CPU ({})", p.cpu_nodes().count(), kinds.join(", "))
    }
}

pub fn optimize(c: &Common, path: &Path, passes: &[PassName]) -> Outcome {
    let g = load_valid(path)?;
    let profile = load_profile(&c.profile)?;
    let cost = CostModel::default();
    let (before, cost_before) = partition_summary(&g, &profile, &cost)?;

    let mut h = g.clone();
    let mut reports = Vec::new();
    for &pass in passes {
        let (next, r) = apply(h, pass, &profile, &cost)?;
        h = next;
        reports.extend(r.into_iter().filter(|r| !r.noop));
    }
    let (after, cost_after) = partition_summary(&h, &profile, &cost)?;

    let gelu_lowered = has_gelu(&g) && !has_gelu(&h);
    let tol = tolerance(c, if gelu_lowered { GELU_MAX_ABS } else { DEFAULT_MAX_ABS })?;
    let eq = equivalence(c, &g, &h, tol)?;

    if let Some(out) = &c.out {
        save_graph(&h, out).map_err(|e| invalid(&out.display().to_string(), e))?;
    }
    let code = if !eq.pass {
        Code::Equivalence
    } else if !after.complete {
        Code::Incomplete
    } else {
        Code::Ok
    };
    eprintln!(
        "optimize: {} -> {} nodes, {} pass report(s); before: {}; after: {}; equivalence {} over {} sample(s) (max_abs {:.3e}, max_rel {:.3e})",
        g.nodes.len(),
        h.nodes.len(),
        reports.len(),
        describe(&before),
        describe(&after),
        if eq.pass { "ok" } else { "FAILED" },
        eq.samples,
        eq.max_abs,
        eq.max_rel,
    );
    print_json(&json!({
        "command": "optimize",
        "seed": c.seed,
        "profile": profile.name,
        "passes": passes.iter().map(|p| format!("{p:?}")).collect::<Vec<_>>(),
        "reports": reports,
        "partition_before": before,
        "partition_after": after,
        "cost_before": cost_before,
        "cost_after": cost_after,
        "structure_after": structural_predicates(&h),
        "equivalence": eq,
        "complete": after.complete,
        "output": c.out,
        "exit_code": code.as_i32(),
    }));
    Ok(code)
}

pub fn verify(c: &Common, reference: &Path, candidate: &Path) -> Outcome {
    let a = load_valid(reference)?;
    let b = load_valid(candidate)?;
    let tol = tolerance(c, DEFAULT_MAX_ABS)?;
    let eq = equivalence(c, &a, &b, tol)?;
    let code = if eq.pass { Code::Ok } else { Code::Equivalence };
    eprintln!(
        "verify: {} over {} sample(s), max_abs {:.3e}, max_rel {:.3e}",
        if eq.pass { "equivalent" } else { "NOT equivalent" },
        eq.samples,
        eq.max_abs,
        eq.max_rel
    );
    let report = json!({ "command": "verify", "seed": c.seed, "equivalence": eq, "exit_code": code.as_i32() });
    write_report(c, &report)?;
    print_json(&report);
    Ok(code)
}

fn write_report(c: &Common, report: &Value) -> Result<(), Failure> {
    if let Some(out) = &c.out {
        let text = serde_json::to_string_pretty(report).expect("reports serialize");
        fs::write(out, text).map_err(|e| invalid(&out.display().to_string(), e))?;
    }
    Ok(())
}

pub fn delegate_report(c: &Common, path: &Path) -> Outcome {
    let g = load_valid(path)?;
    let profile = load_profile(&c.profile)?;
    let cost = CostModel::default();
    let (p, total) = partition_summary(&g, &profile, &cost)?;
    eprintln!("delegate-report: {} nodes, {}", g.nodes.len(), describe(&p));
    for a in p.cpu_nodes() {
        let reasons: Vec<String> = a.reasons.iter().map(ToString::to_string).collect();
        eprintln!("  {} ({}): {}", a.node, a.op, reasons.join("; "));
    }
    let report = json!({
        "command": "delegate-report",
        "seed": c.seed,
        "profile": profile.name,
        "partition": p,
        "cost_model": cost,
        "cost": total,
        "structure": structural_predicates(&g),
    });
    write_report(c, &report)?;
    print_json(&report);
    Ok(Code::Ok)
}

pub struct CompressArgs {
    pub config: Option<PathBuf>,
    pub prune: Vec<String>,
    pub quantize: bool,
    pub per_tensor: bool,
    pub qmax: i8,
}

fn parse_prune(spec: &str) -> Result<PruneSpec, Failure> {
    let (target, r) = spec
        .rsplit_once(':')
        .ok_or_else(|| Failure::validation(format!("--prune {spec}: expected <node>:<sparsity>")))?;
    let sparsity = r
        .parse()
        .map_err(|_| Failure::validation(format!("--prune {spec}: `{r}` is not a number")))?;
    Ok(PruneSpec {
        target: target.to_string(),
        sparsity,
    })
}

pub fn compress(c: &Common, path: &Path, args: CompressArgs) -> Outcome {
    let g = load_valid(path)?;
    let config = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(&p.display().to_string(), e))?;
            CompressConfig::from_json(&text).map_err(|e| invalid(&p.display().to_string(), e))?
        }
        None => CompressConfig {
            prune: args.prune.iter().map(|s| parse_prune(s)).collect::<Result<_, _>>()?,
            quantize: args.quantize.then_some(QuantConfig {
                per_channel: !args.per_tensor,
                qmax: args.qmax,
            }),
            calibration: CalibrationConfig {
                seed: c.seed,
                ..CalibrationConfig::default()
            },
        },
    };
    let (h, report) = run_compress(&g, &config)?;
    if let Some(out) = &c.out {
        save_graph(&h, out).map_err(|e| invalid(&out.display().to_string(), e))?;
    }
    if let Some(q) = &report.quantize {
        eprintln!("compress: {} weight(s) quantized, {} -> {} bytes", q.weights.len(), q.bytes_before, q.bytes_after);
    }
    for p in &report.prune {
        eprintln!("compress: {} lost channels {:?}", p.target, p.removed);
    }
    eprintln!("compress: reconstruction error {:.3e}", report.reconstruction_error);
    print_json(&json!({
        "command": "compress",
        "seed": report.calibration.seed,
        "report": report,
        "output": c.out,
    }));
    Ok(Code::Ok)
}

fn gantt_note(t: &Timeline, width: usize) {
    eprintln!("{}", t.gantt(width));
}

pub fn schedule(c: &Common, path: Option<&Path>, strategy: StrategyArg, width: usize) -> Outcome {
    let s = match path {
        Some(p) => Scenario::load(p).map_err(|e| invalid(&p.display().to_string(), e))?,
        None => Scenario::illustrative(),
    };
    let report = match strategy {
        StrategyArg::Both => {
            let cmp = compare_strategies(&s)?;
            gantt_note(&cmp.naive, width);
            gantt_note(&cmp.pipelined, width);
            json!({ "command": "schedule", "seed": c.seed, "scenario": s, "comparison": cmp })
        }
        one => {
            let st = if one == StrategyArg::Naive { Strategy::NaiveResident } else { Strategy::Pipelined };
            let t = simulate(&s.with_strategy(st))?;
            gantt_note(&t, width);
            json!({ "command": "schedule", "seed": c.seed, "scenario": s.with_strategy(st), "timeline": t })
        }
    };
    write_report(c, &report)?;
    print_json(&report);
    Ok(Code::Ok)
}

pub fn demo(c: &Common, name: &str, size: Size) -> Outcome {
    let spec = DemoSpec::new(name, c.seed, size.into());
    let g = make_demo(&spec)?;
    match &c.out {
        Some(out) => {
            save_graph(&g, out).map_err(|e| invalid(&out.display().to_string(), e))?;
            eprintln!("demo: wrote {} ({} nodes) to {}", name, g.nodes.len(), out.display());
            print_json(&json!({ "command": "demo", "seed": c.seed, "spec": spec, "output": out }));
        }
        None => print_text(&to_json_string(&g)),
    }
    Ok(Code::Ok)
}

