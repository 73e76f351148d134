//! Metrics and robustness experiments for trained models.

use std::fmt::Write as _;
use std::time::Instant;

use crate::dataset::{apply_exclusion, sample_rng, Sample, Scenario};
use crate::error::{Error, Result};
use crate::estimator::{gn_solve, GnSettings};
use crate::factor_graph::{build_factor_graph, encode_features, exact_inference_radius, khop_subgraph, AugmentedFactorGraph, Quantity};
use crate::gnn::{GnnModel, GraphBatch};
use crate::grid::{hop_distances, Branch, Bus, BusKind, PowerSystem, StateVector};
use crate::measurement::{eval_h, Location, Measurement, MeasurementKind, MeasurementSet, Provenance};
use crate::train::prepare;

/// An encoded graph with the labels of its variable nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub graph: AugmentedFactorGraph,
    pub labels: Vec<f64>,
}

/// Predictions for each graph, batched by the model's batch size.
pub fn predict(model: &GnnModel, data: &[Prepared]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(model.config.batch_size.max(1)) {
        let graphs: Vec<&AugmentedFactorGraph> = chunk.iter().map(|p| &p.graph).collect();
        let batch = GraphBatch::new(&graphs)?;
        let pred = model.forward(&batch)?;
        for (k, w) in batch.var_offsets.windows(2).enumerate() {
            debug_assert_eq!(w[1] - w[0], chunk[k].labels.len());
            out.push(pred[w[0]..w[1]].to_vec());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub scenario: String,
    pub seed: Option<u64>,
    pub samples: usize,
    pub mse: f64,
    pub mse_magnitude: f64,
    pub mse_angle: f64,
    pub per_bus_magnitude: Vec<f64>,
    pub per_bus_angle: Vec<f64>,
}

impl EvalReport {
    pub fn summary(&self) -> String {
        format!(
            "scenario {}  seed {}  samples {}\nmse {:.4e}  magnitude {:.4e}  angle {:.4e}\n",
            self.scenario,
            self.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into()),
            self.samples,
            self.mse,
            self.mse_magnitude,
            self.mse_angle
        )
    }

    pub fn per_bus_csv(&self) -> String {
        let mut out = String::from("bus,mse_magnitude,mse_angle\n");
        for (b, (m, a)) in self.per_bus_magnitude.iter().zip(&self.per_bus_angle).enumerate() {
            let _ = writeln!(out, "{b},{m:e},{a:e}");
        }
        out
    }
}

/// Squared error accumulators by bus and quantity.
struct ErrorTally {
    sum: [Vec<f64>; 2],
    count: [Vec<usize>; 2],
}

impl ErrorTally {
    fn new(n: usize) -> Self {
        ErrorTally { sum: [vec![0.0; n], vec![0.0; n]], count: [vec![0; n], vec![0; n]] }
    }

    fn add(&mut self, g: &AugmentedFactorGraph, pred: &[f64], labels: &[f64]) {
        for ((v, p), y) in g.variables.iter().zip(pred).zip(labels) {
            let q = usize::from(v.quantity == Quantity::Angle);
            self.sum[q][v.bus] += (p - y) * (p - y);
            self.count[q][v.bus] += 1;
        }
    }

    fn report(&self, scenario: &str, seed: Option<u64>, samples: usize) -> EvalReport {
        let mean = |q: usize| {
            let c: usize = self.count[q].iter().sum();
            self.sum[q].iter().sum::<f64>() / c.max(1) as f64
        };
        let per_bus = |q: usize| {
            self.sum[q]
                .iter()
                .zip(&self.count[q])
                .map(|(s, &c)| if c == 0 { f64::NAN } else { s / c as f64 })
                .collect()
        };
        let (cm, ca): (usize, usize) = (self.count[0].iter().sum(), self.count[1].iter().sum());
        let total = (self.sum[0].iter().sum::<f64>() + self.sum[1].iter().sum::<f64>()) / (cm + ca).max(1) as f64;
        EvalReport {
            scenario: scenario.to_string(),
            seed,
            samples,
            mse: total,
            mse_magnitude: mean(0),
            mse_angle: mean(1),
            per_bus_magnitude: per_bus(0),
            per_bus_angle: per_bus(1),
        }
    }
}

pub fn evaluate(model: &GnnModel, data: &[Prepared], n_buses: usize, scenario: &str, seed: Option<u64>) -> Result<EvalReport> {
    let preds = predict(model, data)?;
    let mut tally = ErrorTally::new(n_buses);
    for (p, d) in preds.iter().zip(data) {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite prediction in scenario {scenario}")));
        }
        tally.add(&d.graph, p, &d.labels);
    }
    Ok(tally.report(scenario, seed, data.len()))
}

/// Mean squared error of a state estimate against a label.
pub fn state_mse(x: &StateVector, label: &StateVector) -> f64 {
    let n = x.len();
    let s: f64 = (0..n)
        .map(|i| (x.magnitudes[i] - label.magnitudes[i]).powi(2) + (x.angles[i] - label.angles[i]).powi(2))
        .sum();
    s / (2 * n) as f64
}

/// Outcome of flat-start GN over a set of samples' available inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GnTally {
    pub success: usize,
    pub failure: usize,
    /// Mean MSE over the successful solves (NaN when none succeeded).
    pub mse: f64,
}

pub fn gn_baseline(sys: &PowerSystem, samples: &[Sample]) -> GnTally {
    let settings = GnSettings::default().without_condition();
    let (mut success, mut failure, mut sum) = (0, 0, 0.0);
    for s in samples {
        match gn_solve(sys, &s.inputs(), &settings) {
            Ok((x, _)) => {
                success += 1;
                sum += state_mse(&x, &s.label);
            }
            Err(_) => failure += 1,
        }
    }
    GnTally { success, failure, mse: if success == 0 { f64::NAN } else { sum / success as f64 } }
}

pub fn default_fractions() -> Vec<f64> {
    (0..20).map(|k| k as f64 * 0.05).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub gnn: EvalReport,
    pub gn: GnTally,
}

/// Exclusion sweep. Sample `i` at fraction index `k` draws its removals
/// from stream `(seed, 100 + k, i)`.
pub fn exclusion_sweep(model: &GnnModel, sys: &PowerSystem, test: &[Sample], fractions: &[f64], seed: u64, n_max: usize) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(fractions.len());
    for (k, &f) in fractions.iter().enumerate() {
        let scenario: Vec<Sample> = test
            .iter()
            .enumerate()
            .map(|(i, s)| apply_exclusion(s, f, &mut sample_rng(seed, 100 + k as u64, i as u64)))
            .collect::<Result<_>>()?;
        let data = prepare(sys, &scenario, n_max)?;
        let tag = Scenario::Exclusion { fraction: f }.tag();
        let gnn = evaluate(model, &data, sys.n_buses(), &tag, Some(seed))?;
        let gn = gn_baseline(sys, &scenario);
        log::info!("{tag}: gnn {:.4e}, gn failures {}", gnn.mse, gn.failure);
        rows.push(SweepRow { fraction: f, gnn, gn });
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("fraction,gnn_mse,gnn_mse_magnitude,gnn_mse_angle,gn_success,gn_failure,gn_mse\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.2},{:e},{:e},{:e},{},{},{:e}",
            r.fraction, r.gnn.mse, r.gnn.mse_magnitude, r.gnn.mse_angle, r.gn.success, r.gn.failure, r.gn.mse
        );
    }
    out
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalityBucket {
    pub label: &'static str,
    pub mean_mse: f64,
    /// Number of (sample, bus) pairs in the bucket.
    pub population: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalityReport {
    pub samples: usize,
    /// Hop distance 0–1, exactly 2, and ≥ 3 from the source buses.
    pub buckets: Vec<LocalityBucket>,
}

impl LocalityReport {
    /// Near-bucket over far-bucket mean MSE.
    pub fn ratio(&self) -> f64 {
        self.buckets[0].mean_mse / self.buckets[2].mean_mse
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("hops,mean_mse,population\n");
        for b in &self.buckets {
            let _ = writeln!(out, "{},{:e},{}", b.label, b.mean_mse, b.population);
        }
        out
    }
}

const BUCKETS: [&str; 3] = ["0-1", "2", ">=3"];

fn bucket_of(d: usize) -> usize {
    match d {
        0 | 1 => 0,
        2 => 1,
        _ => 2,
    }
}

/// Per-bus MSE (`(e_V² + e_θ²)/2`) bucketed by hop distance from each
/// sample's source buses.
pub fn locality_with_sources(model: &GnnModel, sys: &PowerSystem, samples: &[Sample], sources: &[Vec<usize>], n_max: usize) -> Result<LocalityReport> {
    let data = prepare(sys, samples, n_max)?;
    let preds = predict(model, &data)?;
    let adjacency = sys.adjacency();
    let mut sum = [0.0; 3];
    let mut pop = [0usize; 3];
    for ((d, p), src) in data.iter().zip(&preds).zip(sources) {
        let dist = hop_distances(&adjacency, src);
        let mut per_bus = vec![0.0; sys.n_buses()];
        for ((v, pi), yi) in d.graph.variables.iter().zip(p).zip(&d.labels) {
            per_bus[v.bus] += 0.5 * (pi - yi) * (pi - yi);
        }
        for (b, e) in per_bus.into_iter().enumerate() {
            let k = bucket_of(dist[b]);
            sum[k] += e;
            pop[k] += 1;
        }
    }
    let buckets = (0..3)
        .map(|k| LocalityBucket {
            label: BUCKETS[k],
            mean_mse: if pop[k] == 0 { f64::NAN } else { sum[k] / pop[k] as f64 },
            population: pop[k],
        })
        .collect();
    Ok(LocalityReport { samples: samples.len(), buckets })
}

/// Locality of neighbourhood-exclusion samples around their excluded pair.
pub fn locality_report(model: &GnnModel, sys: &PowerSystem, samples: &[Sample], n_max: usize) -> Result<LocalityReport> {
    let sources = samples
        .iter()
        .map(|s| match s.scenario {
            Scenario::Neighborhood { pair } => Ok(vec![pair.0, pair.1]),
            _ => Err(Error::Scenario("locality report needs neighbourhood-exclusion samples".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    locality_with_sources(model, sys, samples, &sources, n_max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub gnn: EvalReport,
    pub gn: GnTally,
    /// GNN locality around the attacked bus.
    pub locality: LocalityReport,
}

impl AttackReport {
    pub fn summary(&self) -> String {
        format!(
            "{}gn mse {:.4e} over {} converged ({} failed)\ngnn/gn ratio {:.4}\n",
            self.gnn.summary(),
            self.gn.mse,
            self.gn.success,
            self.gn.failure,
            self.gnn.mse / self.gn.mse
        )
    }
}

pub fn attack_eval(model: &GnnModel, sys: &PowerSystem, attacked: &[Sample], seed: u64, n_max: usize) -> Result<AttackReport> {
    let sources = attacked
        .iter()
        .map(|s| match s.scenario {
            Scenario::Attack { bus, .. } => Ok(vec![bus]),
            _ => Err(Error::Scenario("attack evaluation needs attacked samples".into())),
        })
        .collect::<Result<Vec<_>>>()?;
    let data = prepare(sys, attacked, n_max)?;
    let gnn = evaluate(model, &data, sys.n_buses(), "attack", Some(seed))?;
    let gn = gn_baseline(sys, attacked);
    let locality = locality_with_sources(model, sys, attacked, &sources, n_max)?;
    Ok(AttackReport { gnn, gn, locality })
}

// ---------------------------------------------------------------------------
// distributed inference

/// Magnitude and angle prediction of `bus` from its `hops`-hop subgraph
/// (the exact radius for the model depth when `hops` is `None`).
pub fn distributed_infer(model: &GnnModel, g: &AugmentedFactorGraph, bus: usize, hops: Option<usize>) -> Result<(f64, f64)> {
    let hops = hops.unwrap_or_else(|| exact_inference_radius(model.config.layers, g.augmented));
    let sub = khop_subgraph(g, bus, hops)?;
    let (m, a) = sub.bus_variables(bus).ok_or(Error::UnknownBus(bus))?;
    let pred = model.forward(&GraphBatch::single(&sub)?)?;
    Ok((pred[m], pred[a]))
}

/// Largest `|local − full|` over every bus of `g`.
pub fn local_inference_gap(model: &GnnModel, g: &AugmentedFactorGraph, hops: Option<usize>) -> Result<f64> {
    let full = model.forward(&GraphBatch::single(g)?)?;
    let mut worst = 0.0f64;
    for bus in 0..g.bus_adjacency.len() {
        let (m, a) = g.bus_variables(bus).ok_or(Error::UnknownBus(bus))?;
        let (lm, la) = distributed_infer(model, g, bus, hops)?;
        worst = worst.max((lm - full[m]).abs()).max((la - full[a]).abs());
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// synthetic chains and scaling

/// `n` buses in a line, reference at bus 0.
pub fn chain_system(n: usize) -> Result<PowerSystem> {
    let buses = (0..n)
        .map(|id| Bus {
            id,
            kind: if id == 0 { BusKind::Reference } else { BusKind::Load },
            shunt_conductance: 0.0,
            shunt_susceptance: 0.0,
        })
        .collect();
    let branches = (1..n).map(|i| Branch::line(i - 1, i, 1.0, -10.0, 0.01)).collect();
    PowerSystem::new(format!("chain{n}"), buses, branches, 100.0, None)
}

/// Chain measurement pattern: V and P injection at every bus, P flow on
/// every branch, a voltage phasor at every tenth bus. Values are exact for
/// a gently sloping voltage profile.
pub fn chain_measurements(sys: &PowerSystem) -> MeasurementSet {
    let n = sys.n_buses();
    let x = StateVector {
        magnitudes: (0..n).map(|i| 1.0 - 0.02 * (i as f64 * 0.1).sin()).collect(),
        angles: (0..n).map(|i| -0.01 * (i as f64 * 0.05).sin()).collect(),
    };
    let mut slots = Vec::new();
    for b in 0..n {
        slots.push((MeasurementKind::VoltageMagnitude, Location::Bus(b), 1e-3));
        slots.push((MeasurementKind::ActiveInjection, Location::Bus(b), 1e-1));
        if b % 10 == 0 {
            slots.push((MeasurementKind::PmuVoltageMagnitude, Location::Bus(b), 1e-5));
            slots.push((MeasurementKind::PmuVoltageAngle, Location::Bus(b), 1e-5));
        }
    }
    for branch in 0..sys.branches.len() {
        slots.push((
            MeasurementKind::ActiveFlow,
            Location::Branch { branch, side: crate::grid::Side::From },
            1e-3,
        ));
    }
    let mut ms = MeasurementSet::new();
    for (kind, location, variance) in slots {
        let mut m = Measurement { kind, location, value: 0.0, variance };
        m.value = eval_h(sys, &x, &m);
        ms.push(m, Provenance::Clean);
    }
    ms
}

pub fn chain_graph(n: usize, augment: bool) -> Result<AugmentedFactorGraph> {
    let sys = chain_system(n)?;
    let ms = chain_measurements(&sys);
    let g = crate::factor_graph::build_factor_graph_with(&sys, &ms, augment)?;
    encode_features(g, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub buses: usize,
    pub variables: usize,
    pub edges: usize,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
    pub slope: f64,
}

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("buses,variables,edges,seconds\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:e}", r.buses, r.variables, r.edges, r.seconds);
        }
        let _ = writeln!(out, "# log-log slope {:.4}", self.slope);
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    num / den
}

/// Fastest forward-pass wall time on augmented chain graphs. The sizes are
/// timed round-robin, so slow phases of the machine hit all of them alike,
/// until every size has at least `min_repeats` runs and `min_seconds` of
/// accumulated time. The minimum filters out scheduler and cache noise,
/// which only ever adds time.
pub fn scaling_probe(model: &GnnModel, sizes: &[usize], min_repeats: usize, min_seconds: f64) -> Result<ScalingReport> {
    let mut cases = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let g = chain_graph(n, true)?;
        let batch = GraphBatch::single(&g)?;
        model.forward(&batch)?;
        cases.push((g, batch));
    }
    let mut best = vec![f64::INFINITY; sizes.len()];
    let mut spent = vec![0.0; sizes.len()];
    let mut runs = 0;
    while runs < min_repeats.max(1) || spent.iter().any(|&t| t < min_seconds) {
        for (k, (_, batch)) in cases.iter().enumerate() {
            let t = Instant::now();
            let out = model.forward(batch)?;
            let dt = t.elapsed().as_secs_f64();
            std::hint::black_box(out);
            best[k] = best[k].min(dt);
            spent[k] += dt;
        }
        runs += 1;
    }
    let rows: Vec<ScalingRow> = sizes
        .iter()
        .zip(&cases)
        .zip(&best)
        .map(|((&n, (g, _)), &seconds)| ScalingRow {
            buses: n,
            variables: g.n_variables(),
            edges: 2 * g.factor_edges.len() + 2 * g.variable_edges.len(),
            seconds,
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.buses as f64).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.seconds).collect();
    Ok(ScalingReport { slope: loglog_slope(&xs, &ys), rows })
}

/// Distinct buses whose variables appear in the `hops` subgraph of `bus`.
pub fn subgraph_bus_count(g: &AugmentedFactorGraph, bus: usize, hops: usize) -> Result<usize> {
    let sub = khop_subgraph(g, bus, hops)?;
    let mut buses: Vec<usize> = sub.variables.iter().map(|v| v.bus).collect();
    buses.dedup();
    Ok(buses.len())
}

/// Factor graph of a measurement set with features, convenience for callers
/// that do not go through [`Sample`].
pub fn encoded_graph(sys: &PowerSystem, ms: &MeasurementSet, n_max: usize) -> Result<AugmentedFactorGraph> {
    encode_features(build_factor_graph(sys, ms)?, n_max)
}
