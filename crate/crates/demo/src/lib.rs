//! Browser bindings. Every export takes and returns JSON text so the page
//! needs no generated types.

use posthoc_core::control::{self, DecisionRule};
use posthoc_core::nn::{dot, Tensor2};
use posthoc_core::{Generator, GeneratorConfig, SplitSpec};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Oracle grid resolution. The grid grows quickly with K, so the oracle is
/// skipped beyond `ORACLE_MAX_EXPERTS`.
const ORACLE_STEP: f64 = 0.02;
const ORACLE_MAX_EXPERTS: usize = 4;
const MAX_SAMPLE: usize = 5000;

fn parse<T: serde::de::DeserializeOwned>(what: &str, text: &str) -> Result<T, String> {
    serde_json::from_str(text).map_err(|e| format!("{what}: {e}"))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("demo output serializes")
}

#[derive(Serialize)]
struct RuleOutput {
    rule: DecisionRule,
    label: usize,
    expert: Option<usize>,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct AggregateOutput {
    rules: Vec<RuleOutput>,
    worst_case_risk: Vec<f64>,
    oracle_label: Option<usize>,
}

/// `experts` is a `K × |Y|` array of expert distributions, `router` the K
/// mixture weights.
pub fn aggregate(experts: &str, router: &str) -> Result<String, String> {
    let rows: Vec<Vec<f64>> = parse("experts", experts)?;
    let pi: Vec<f64> = parse("router", router)?;
    let p = Tensor2::from_rows(&rows).map_err(|e| e.to_string())?;
    let mut rules = Vec::new();
    for rule in DecisionRule::ALL {
        let d = control::aggregate(&p, &pi, rule).map_err(|e| e.to_string())?;
        rules.push(RuleOutput {
            rule,
            label: d.label,
            expert: d.expert,
            scores: d.scores,
        });
    }
    let worst_case_risk = (0..p.cols())
        .map(|y| control::worst_case_risk(&p, y))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let oracle_label = if p.rows() <= ORACLE_MAX_EXPERTS {
        Some(control::minimax_oracle(&p, ORACLE_STEP).map_err(|e| e.to_string())?.label)
    } else {
        None
    };
    Ok(to_json(&AggregateOutput {
        rules,
        worst_case_risk,
        oracle_label,
    }))
}

#[derive(Serialize)]
struct PenaltyOutput {
    value: f64,
    numerator: f64,
    denominator: f64,
    ell_effective: usize,
    gram: Vec<Vec<f64>>,
    keep: Vec<Vec<bool>>,
}

/// `router` holds one K-entry router distribution per batch instance.
pub fn router_penalty(router: &str, ell: usize) -> Result<String, String> {
    let dists: Vec<Vec<f64>> = parse("router", router)?;
    let pc = posthoc_core::penalty(&dists, ell)
        .map_err(|e| e.to_string())?
        .ok_or("the penalty needs at least two instances")?;
    let m = pc.batch_size();
    Ok(to_json(&PenaltyOutput {
        value: pc.value,
        numerator: pc.numerator,
        denominator: pc.denominator,
        ell_effective: pc.ell_effective,
        gram: (0..m).map(|i| pc.gram.row(i).to_vec()).collect(),
        keep: pc.keep.chunks(m).map(<[bool]>::to_vec).collect(),
    }))
}

#[derive(Serialize)]
struct Point {
    u: f64,
    v: f64,
    y: usize,
    shortcut_vote: usize,
}

#[derive(Serialize)]
struct SampleOutput {
    points: Vec<Point>,
    prototypes: Vec<[f64; 2]>,
    shortcut_accuracy: f64,
    core_accuracy: f64,
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Plane through the first three prototypes, as an orthonormal pair.
fn prototype_plane(protos: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<f64>>();
    let mut e1 = diff(&protos[1], &protos[0]);
    normalize(&mut e1);
    let mut e2 = if protos.len() > 2 {
        diff(&protos[2], &protos[0])
    } else {
        let mut e = vec![0.0; e1.len()];
        e[0] = 1.0;
        e
    };
    let along = dot(&e2, &e1);
    e2.iter_mut().zip(&e1).for_each(|(x, y)| *x -= along * y);
    normalize(&mut e2);
    (e1, e2)
}

/// Draws `n` instances from the default generator with every shortcut set
/// to correlation `rho`, projecting the core features onto the plane of the
/// label prototypes.
pub fn sample_split(seed: u64, rho: f64, n: usize) -> Result<String, String> {
    if n == 0 || n > MAX_SAMPLE {
        return Err(format!("sample size must be in 1..={MAX_SAMPLE}"));
    }
    let generator = Generator::new(GeneratorConfig {
        seed,
        ..GeneratorConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let config = generator.config();
    let spec = SplitSpec::new("demo", n).with_rho(vec![rho; config.num_shortcuts]);
    let instances = generator.sample_split(&spec).map_err(|e| e.to_string())?;
    let (e1, e2) = prototype_plane(generator.prototypes());
    let core_dim = config.core_dim;
    let points: Vec<Point> = instances
        .iter()
        .map(|inst| {
            let core = &inst.x[..core_dim];
            Point {
                u: dot(core, &e1),
                v: dot(core, &e2),
                y: inst.y,
                shortcut_vote: generator.shortcut_vote(&inst.x),
            }
        })
        .collect();
    let share = |hit: &dyn Fn(&posthoc_core::Instance) -> bool| {
        instances.iter().filter(|i| hit(i)).count() as f64 / n as f64
    };
    Ok(to_json(&SampleOutput {
        shortcut_accuracy: share(&|i| generator.shortcut_vote(&i.x) == i.y),
        core_accuracy: share(&|i| generator.nearest_prototype(&i.x[..core_dim]) == i.y),
        prototypes: generator.prototypes().iter().map(|p| [dot(p, &e1), dot(p, &e2)]).collect(),
        points,
    }))
}

#[wasm_bindgen(js_name = aggregate)]
pub fn aggregate_js(experts: &str, router: &str) -> Result<String, JsError> {
    aggregate(experts, router).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = routerPenalty)]
pub fn router_penalty_js(router: &str, ell: usize) -> Result<String, JsError> {
    router_penalty(router, ell).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = sampleSplit)]
pub fn sample_split_js(seed: u32, rho: f64, n: usize) -> Result<String, JsError> {
    sample_split(seed.into(), rho, n).map_err(|e| JsError::new(&e))
}
