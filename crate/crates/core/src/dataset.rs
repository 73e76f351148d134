//! Synthetic training data: random operating points, fixed measurement
//! placement, Gaussian noise, Gauss–Newton labels, plus the exclusion and
//! attack scenario transforms used for robustness tests.
//!
//! Each sample draws every load's P and Q scale independently from
//! `U(load_min, load_max)`, solves the power flow for the truth, adds
//! `N(0, noise_scale² · v)` to the exact measurement values and labels the
//! result with a flat-start GN solution. Generation of a sample is retried
//! (fresh draws from the same stream) up to [`MAX_RETRIES`] times.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample as index_sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::estimator::{gn_solve, GnSettings};
use crate::factor_graph::{build_factor_graph, encode_features, remove_factors, AugmentedFactorGraph};
use crate::grid::{wrap_angle, PowerSystem, Side, StateVector};
use crate::matpower::load_case;
use crate::measurement::{
    eval_h, format_location, parse_row, Location, Measurement, MeasurementKind, MeasurementSet, Provenance,
};
use crate::powerflow::{solve_power_flow, PowerFlowSpec, DEFAULT_MAX_ITER, DEFAULT_TOL};

pub const MAX_RETRIES: usize = 10;
pub const FORMAT_VERSION: u32 = 1;
const PLACEMENT_ATTEMPTS: usize = 50;
pub const PLACEMENT_TRIALS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseVariances {
    pub phasor: f64,
    /// Legacy flows, current magnitudes and voltage magnitudes.
    pub legacy: f64,
    pub injection: f64,
}

impl Default for NoiseVariances {
    fn default() -> Self {
        NoiseVariances { phasor: 1e-5, legacy: 1e-3, injection: 1e-1 }
    }
}

impl NoiseVariances {
    pub fn of(&self, kind: MeasurementKind) -> f64 {
        match kind {
            MeasurementKind::ActiveInjection | MeasurementKind::ReactiveInjection => self.injection,
            k if k.is_phasor() => self.phasor,
            _ => self.legacy,
        }
    }
}

/// Legacy kinds drawn by default. Legacy current magnitudes are left out:
/// `|I|` is not smooth at zero current and with `v = 1e-3` its noise is of
/// the order of many branch currents, which stalls flat-start GN.
pub const DEFAULT_LEGACY_KINDS: [MeasurementKind; 5] = [
    MeasurementKind::ActiveFlow,
    MeasurementKind::ReactiveFlow,
    MeasurementKind::ActiveInjection,
    MeasurementKind::ReactiveInjection,
    MeasurementKind::VoltageMagnitude,
];

/// Counts and seeds from which a fixed placement is drawn.
#[derive(Debug, Clone, PartialEq)]
pub struct RecipeSpec {
    /// Case specifier understood by [`load_case`].
    pub system: String,
    pub legacy_count: usize,
    /// Legacy kinds the placement draws from, uniformly.
    pub legacy_kinds: Vec<MeasurementKind>,
    pub pmu_count: usize,
    /// Total number of branches incident to the PMU buses.
    pub pmu_currents: usize,
    pub variances: NoiseVariances,
    pub load_min: f64,
    pub load_max: f64,
    /// Multiplies the noise standard deviation; 0 gives exact measurements.
    pub noise_scale: f64,
    pub placement_seed: u64,
}

impl RecipeSpec {
    pub fn ieee30(placement_seed: u64) -> Self {
        RecipeSpec {
            system: "ieee30".into(),
            legacy_count: 100,
            legacy_kinds: DEFAULT_LEGACY_KINDS.to_vec(),
            pmu_count: 3,
            pmu_currents: 8,
            variances: NoiseVariances::default(),
            load_min: 0.7,
            load_max: 1.3,
            noise_scale: 1.0,
            placement_seed,
        }
    }

    pub fn ieee118(placement_seed: u64) -> Self {
        RecipeSpec {
            system: "ieee118".into(),
            legacy_count: 500,
            pmu_count: 7,
            pmu_currents: 26,
            ..RecipeSpec::ieee30(placement_seed)
        }
    }

    /// Measurement count implied by the recipe: every PMU contributes two
    /// voltage channels and two channels per incident branch.
    pub fn measurement_count(&self) -> usize {
        self.legacy_count + 2 * self.pmu_count + 2 * self.pmu_currents
    }

    fn validate(&self) -> Result<()> {
        if !(self.load_min > 0.0 && self.load_min <= self.load_max && self.load_max.is_finite()) {
            return Err(Error::Config("load scale range must satisfy 0 < min <= max".into()));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(Error::Config("noise_scale must be >= 0".into()));
        }
        if self.legacy_kinds.is_empty() && self.legacy_count > 0 {
            return Err(Error::Config("legacy_kinds is empty".into()));
        }
        if self.legacy_kinds.iter().any(|k| k.is_phasor()) {
            return Err(Error::Config("legacy_kinds may not contain phasor kinds".into()));
        }
        for v in [self.variances.phasor, self.variances.legacy, self.variances.injection] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config("noise variances must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One measurement position with its variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    pub kind: MeasurementKind,
    pub location: Location,
    pub variance: f64,
}

/// A recipe with its placement resolved against a system.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecipe {
    pub spec: RecipeSpec,
    pub pmu_buses: Vec<usize>,
    /// Legacy slots in draw order, then per PMU bus: V, θ, and |I|, arg I
    /// for every incident branch.
    pub slots: Vec<Slot>,
}

fn legacy_candidates(sys: &PowerSystem, kind: MeasurementKind) -> Vec<Location> {
    if kind.is_branch() {
        (0..sys.branches.len())
            .flat_map(|branch| [Side::From, Side::To].map(|side| Location::Branch { branch, side }))
            .collect()
    } else {
        (0..sys.n_buses()).map(Location::Bus).collect()
    }
}

fn draw_slots(sys: &PowerSystem, spec: &RecipeSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<usize>, Vec<Slot>)> {
    let kinds = &spec.legacy_kinds;
    let candidates: Vec<Vec<Location>> = kinds.iter().map(|&k| legacy_candidates(sys, k)).collect();
    let capacity: usize = candidates.iter().map(|c| c.len()).sum();
    if spec.legacy_count > capacity {
        return Err(Error::Config(format!(
            "{} legacy measurements requested, system offers {capacity} positions",
            spec.legacy_count
        )));
    }
    let mut used = HashSet::new();
    let mut slots = Vec::with_capacity(spec.measurement_count());
    while slots.len() < spec.legacy_count {
        let k = rng.gen_range(0..kinds.len());
        let kind = kinds[k];
        let location = candidates[k][rng.gen_range(0..candidates[k].len())];
        if used.insert((kind, location)) {
            slots.push(Slot { kind, location, variance: spec.variances.of(kind) });
        }
    }

    let n = sys.n_buses();
    if spec.pmu_count > n {
        return Err(Error::Config("more PMUs than buses".into()));
    }
    let degree: Vec<usize> = (0..n).map(|b| sys.incident_branches(b).map(|l| l.len()).unwrap_or(0)).collect();
    let mut pmu_buses = None;
    for _ in 0..200_000 {
        let mut pick = index_sample(rng, n, spec.pmu_count).into_vec();
        if pick.iter().map(|&b| degree[b]).sum::<usize>() == spec.pmu_currents {
            pick.sort_unstable();
            pmu_buses = Some(pick);
            break;
        }
    }
    let pmu_buses = pmu_buses.ok_or_else(|| {
        Error::Config(format!(
            "no set of {} PMU buses with {} incident branches found",
            spec.pmu_count, spec.pmu_currents
        ))
    })?;
    for &b in &pmu_buses {
        for kind in [MeasurementKind::PmuVoltageMagnitude, MeasurementKind::PmuVoltageAngle] {
            slots.push(Slot { kind, location: Location::Bus(b), variance: spec.variances.phasor });
        }
        for &(branch, side) in sys.incident_branches(b)? {
            for kind in [MeasurementKind::PmuCurrentMagnitude, MeasurementKind::PmuCurrentAngle] {
                slots.push(Slot { kind, location: Location::Branch { branch, side }, variance: spec.variances.phasor });
            }
        }
    }
    Ok((pmu_buses, slots))
}

fn exact_set(sys: &PowerSystem, slots: &[Slot], x: &StateVector) -> MeasurementSet {
    let mut ms = MeasurementSet::new();
    for s in slots {
        let mut m = Measurement { kind: s.kind, location: s.location, value: 0.0, variance: s.variance };
        m.value = eval_h(sys, x, &m);
        ms.push(m, Provenance::Clean);
    }
    ms
}

impl SampleRecipe {
    /// Draws the placement from `spec.placement_seed`. A placement is
    /// redrawn unless GN recovers the noise-free nominal operating point and
    /// converges at the first attempt on [`PLACEMENT_TRIALS`] noisy trial
    /// samples.
    pub fn build(sys: &PowerSystem, spec: RecipeSpec) -> Result<Self> {
        spec.validate()?;
        let nominal = solve_power_flow(sys, &PowerFlowSpec::nominal(sys), DEFAULT_TOL, DEFAULT_MAX_ITER)?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.placement_seed);
        for n in 0..PLACEMENT_ATTEMPTS {
            let (pmu_buses, slots) = draw_slots(sys, &spec, &mut rng)?;
            let ms = exact_set(sys, &slots, &nominal);
            let observable = matches!(
                gn_solve(sys, &ms, &GnSettings::default().without_condition()),
                Ok((x, _)) if x.max_abs_diff(&nominal) < 1e-6
            );
            let candidate = SampleRecipe { spec: spec.clone(), pmu_buses, slots };
            if observable {
                let mut trial_rng = ChaCha8Rng::seed_from_u64(spec.placement_seed);
                trial_rng.set_stream(1 + n as u64);
                if (0..PLACEMENT_TRIALS).all(|_| attempt(sys, &candidate, &mut trial_rng).is_ok()) {
                    return Ok(candidate);
                }
            }
            log::debug!("placement attempt {n} rejected, redrawing");
        }
        Err(Error::Generation(format!(
            "no observable placement in {PLACEMENT_ATTEMPTS} attempts"
        )))
    }

    pub fn measurement_count(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    Clean,
    Exclusion { fraction: f64 },
    Neighborhood { pair: (usize, usize) },
    Attack { bus: usize, scale: f64 },
}

impl Scenario {
    pub fn tag(&self) -> String {
        match self {
            Scenario::Clean => "clean".into(),
            Scenario::Exclusion { fraction } => format!("exclusion-{:02}", (fraction * 100.0).round() as u32),
            Scenario::Neighborhood { pair } => format!("neighborhood-{}-{}", pair.0, pair.1),
            Scenario::Attack { bus, .. } => format!("attack-{bus}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Full measurement set (with corrupted values for attacks).
    pub measurements: MeasurementSet,
    /// Indices of measurements excluded from the inputs.
    pub removed: Vec<usize>,
    /// Indices whose values were corrupted.
    pub attacked: Vec<usize>,
    pub label: StateVector,
    pub truth: StateVector,
    pub scenario: Scenario,
}

impl Sample {
    /// Measurements actually available to an estimator.
    pub fn inputs(&self) -> MeasurementSet {
        self.measurements.without(&self.removed)
    }

    /// Encoded factor graph of the full placement with the removed factors
    /// dropped, so augmentation edges survive exclusion.
    pub fn graph(&self, sys: &PowerSystem, n_max: usize) -> Result<AugmentedFactorGraph> {
        let g = encode_features(build_factor_graph(sys, &self.measurements)?, n_max)?;
        if self.removed.is_empty() {
            Ok(g)
        } else {
            remove_factors(&g, &self.removed)
        }
    }
}

fn draw_truth(sys: &PowerSystem, spec: &RecipeSpec, rng: &mut ChaCha8Rng) -> Result<StateVector> {
    let mut pf = PowerFlowSpec::nominal(sys);
    for (i, nom) in sys.nominal.iter().enumerate() {
        let a = rng.gen_range(spec.load_min..=spec.load_max);
        let b = rng.gen_range(spec.load_min..=spec.load_max);
        pf.active[i] = nom.gen_p - nom.load_p * a;
        pf.reactive[i] = nom.gen_q - nom.load_q * b;
    }
    solve_power_flow(sys, &pf, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

fn attempt(sys: &PowerSystem, recipe: &SampleRecipe, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let truth = draw_truth(sys, &recipe.spec, rng)?;
    let mut ms = MeasurementSet::new();
    for s in &recipe.slots {
        let mut m = Measurement { kind: s.kind, location: s.location, value: 0.0, variance: s.variance };
        let noise: f64 = rng.sample(StandardNormal);
        let mut z = eval_h(sys, &truth, &m) + recipe.spec.noise_scale * s.variance.sqrt() * noise;
        if s.kind.is_angle() {
            z = wrap_angle(z);
        }
        m.value = z;
        ms.push(m, if recipe.spec.noise_scale > 0.0 { Provenance::Noisy } else { Provenance::Clean });
    }
    let (label, _) = gn_solve(sys, &ms, &GnSettings::default().without_condition())?;
    Ok(Sample {
        measurements: ms,
        removed: Vec::new(),
        attacked: Vec::new(),
        label,
        truth,
        scenario: Scenario::Clean,
    })
}

pub fn generate_sample(sys: &PowerSystem, recipe: &SampleRecipe, rng: &mut ChaCha8Rng) -> Result<Sample> {
    let mut last_err = None;
    for _ in 0..MAX_RETRIES {
        match attempt(sys, recipe, rng) {
            Ok(s) => return Ok(s),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Generation(format!(
        "sample rejected {MAX_RETRIES} times, last error: {}",
        last_err.map(|e| e.to_string()).unwrap_or_default()
    )))
}

/// RNG for sample `index` of split `split` under `seed`.
pub fn sample_rng(seed: u64, split: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((split << 40) | index);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSizes {
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub recipe: SampleRecipe,
    pub master_seed: u64,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

fn generate_split(sys: &PowerSystem, recipe: &SampleRecipe, seed: u64, split: u64, n: usize) -> Result<Vec<Sample>> {
    let one = |i: usize| generate_sample(sys, recipe, &mut sample_rng(seed, split, i as u64));
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(one).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(one).collect()
    }
}

pub fn generate_dataset(sys: &PowerSystem, recipe: &SampleRecipe, sizes: SplitSizes, master_seed: u64) -> Result<Dataset> {
    Ok(Dataset {
        recipe: recipe.clone(),
        master_seed,
        train: generate_split(sys, recipe, master_seed, 0, sizes.train)?,
        val: generate_split(sys, recipe, master_seed, 1, sizes.val)?,
        test: generate_split(sys, recipe, master_seed, 2, sizes.test)?,
    })
}

impl Dataset {
    pub fn split(&self, name: &str) -> Option<&[Sample]> {
        match name {
            "train" => Some(&self.train),
            "val" => Some(&self.val),
            "test" => Some(&self.test),
            _ => None,
        }
    }

    pub fn sizes(&self) -> SplitSizes {
        SplitSizes { train: self.train.len(), val: self.val.len(), test: self.test.len() }
    }
}

// ---------------------------------------------------------------------------
// scenarios

/// Removes `⌊fraction · m⌋` measurements chosen uniformly at random.
pub fn apply_exclusion(sample: &Sample, fraction: f64, rng: &mut impl Rng) -> Result<Sample> {
    if !(0.0..=0.95 + 1e-12).contains(&fraction) {
        return Err(Error::Scenario(format!("exclusion fraction {fraction} outside [0, 0.95]")));
    }
    let m = sample.measurements.len();
    let k = ((fraction * m as f64) + 1e-9).floor() as usize;
    let mut removed = index_sample(rng, m, k).into_vec();
    removed.sort_unstable();
    Ok(Sample { removed, scenario: Scenario::Exclusion { fraction }, ..sample.clone() })
}

fn touches(sys: &PowerSystem, m: &Measurement, buses: &[usize]) -> bool {
    m.location.buses(sys).iter().any(|b| buses.contains(b))
}

pub const SCENARIO_MEASUREMENTS: usize = 5;

/// Removes five measurements touching a random pair of adjacent buses.
pub fn apply_neighborhood_exclusion(sample: &Sample, sys: &PowerSystem, rng: &mut impl Rng) -> Result<Sample> {
    let mut pairs: Vec<(usize, usize)> = sys
        .branches
        .iter()
        .map(|b| (b.from.min(b.to), b.from.max(b.to)))
        .collect();
    pairs.sort_unstable();
    pairs.dedup();
    let eligible: Vec<((usize, usize), Vec<usize>)> = pairs
        .into_iter()
        .filter_map(|(a, b)| {
            let idx: Vec<usize> = sample
                .measurements
                .iter()
                .enumerate()
                .filter(|(_, m)| touches(sys, m, &[a, b]))
                .map(|(i, _)| i)
                .collect();
            (idx.len() >= SCENARIO_MEASUREMENTS).then_some(((a, b), idx))
        })
        .collect();
    if eligible.is_empty() {
        return Err(Error::Scenario("no adjacent bus pair with five incident measurements".into()));
    }
    let (pair, idx) = &eligible[rng.gen_range(0..eligible.len())];
    let mut removed: Vec<usize> = index_sample(rng, idx.len(), SCENARIO_MEASUREMENTS)
        .into_iter()
        .map(|i| idx[i])
        .collect();
    removed.sort_unstable();
    Ok(Sample { removed, scenario: Scenario::Neighborhood { pair: *pair }, ..sample.clone() })
}

/// Measurements whose buses all lie in the closed neighbourhood of `bus`.
pub fn one_hop_measurements(sys: &PowerSystem, ms: &MeasurementSet, bus: usize) -> Vec<usize> {
    let mut hood = sys.neighbors(bus);
    hood.push(bus);
    ms.iter()
        .enumerate()
        .filter(|(_, m)| m.location.buses(sys).iter().all(|b| hood.contains(b)))
        .map(|(i, _)| i)
        .collect()
}

/// Corrupts five measurements in the one-hop set of a random bus:
/// `z ← z + U(−1, 1) · max(0.5, 5|z|) · scale`.
pub fn apply_attack(sample: &Sample, sys: &PowerSystem, scale: f64, rng: &mut impl Rng) -> Result<Sample> {
    let eligible: Vec<(usize, Vec<usize>)> = (0..sys.n_buses())
        .map(|b| (b, one_hop_measurements(sys, &sample.measurements, b)))
        .filter(|(_, idx)| idx.len() >= SCENARIO_MEASUREMENTS)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Scenario("no bus with five measurements in its neighbourhood".into()));
    }
    let (bus, idx) = &eligible[rng.gen_range(0..eligible.len())];
    let mut attacked: Vec<usize> = index_sample(rng, idx.len(), SCENARIO_MEASUREMENTS)
        .into_iter()
        .map(|i| idx[i])
        .collect();
    attacked.sort_unstable();
    let mut out = Sample { scenario: Scenario::Attack { bus: *bus, scale }, attacked: attacked.clone(), ..sample.clone() };
    for &i in &attacked {
        let m = &mut out.measurements.measurements[i];
        let u: f64 = rng.gen_range(-1.0..1.0);
        let mut z = m.value + u * (5.0 * m.value.abs()).max(0.5) * scale;
        if m.kind.is_angle() {
            z = wrap_angle(z);
        }
        m.value = z;
        if scale != 0.0 {
            out.measurements.provenance[i] = Provenance::Attacked;
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// storage

fn manifest_text(ds: &Dataset) -> String {
    let s = &ds.recipe.spec;
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(out, "{k}={v}");
    };
    kv("format_version", FORMAT_VERSION.to_string());
    kv("system", s.system.clone());
    kv("legacy_count", s.legacy_count.to_string());
    let kinds: Vec<&str> = s.legacy_kinds.iter().map(|k| k.as_str()).collect();
    kv("legacy_kinds", kinds.join(","));
    kv("pmu_count", s.pmu_count.to_string());
    kv("pmu_currents", s.pmu_currents.to_string());
    kv("variance_phasor", s.variances.phasor.to_string());
    kv("variance_legacy", s.variances.legacy.to_string());
    kv("variance_injection", s.variances.injection.to_string());
    kv("load_min", s.load_min.to_string());
    kv("load_max", s.load_max.to_string());
    kv("noise_scale", s.noise_scale.to_string());
    kv("placement_seed", s.placement_seed.to_string());
    kv("master_seed", ds.master_seed.to_string());
    kv("measurements_per_sample", ds.recipe.measurement_count().to_string());
    let pmu: Vec<String> = ds.recipe.pmu_buses.iter().map(|b| b.to_string()).collect();
    kv("pmu_buses", pmu.join(","));
    kv("train", ds.train.len().to_string());
    kv("val", ds.val.len().to_string());
    kv("test", ds.test.len().to_string());
    out
}

pub fn parse_manifest(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected key=value".into() })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    map.get(key)
        .ok_or_else(|| Error::Config(format!("manifest lacks `{key}`")))?
        .parse()
        .map_err(|_| Error::Config(format!("manifest field `{key}` is malformed")))
}

pub fn parse_kinds(text: &str) -> Result<Vec<MeasurementKind>> {
    text.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| MeasurementKind::parse(t).ok_or_else(|| Error::Config(format!("unknown measurement kind `{t}`"))))
        .collect()
}

/// Recipe and split sizes recorded in a manifest.
pub fn manifest_recipe(map: &BTreeMap<String, String>) -> Result<(RecipeSpec, SplitSizes, u64)> {
    let version: u32 = get(map, "format_version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Config(format!("unsupported dataset format {version}")));
    }
    let spec = RecipeSpec {
        system: get(map, "system")?,
        legacy_count: get(map, "legacy_count")?,
        legacy_kinds: parse_kinds(&get::<String>(map, "legacy_kinds")?)?,
        pmu_count: get(map, "pmu_count")?,
        pmu_currents: get(map, "pmu_currents")?,
        variances: NoiseVariances {
            phasor: get(map, "variance_phasor")?,
            legacy: get(map, "variance_legacy")?,
            injection: get(map, "variance_injection")?,
        },
        load_min: get(map, "load_min")?,
        load_max: get(map, "load_max")?,
        noise_scale: get(map, "noise_scale")?,
        placement_seed: get(map, "placement_seed")?,
    };
    let sizes = SplitSizes { train: get(map, "train")?, val: get(map, "val")?, test: get(map, "test")? };
    Ok((spec, sizes, get(map, "master_seed")?))
}

fn state_rows(out: &mut String, i: usize, x: &StateVector) {
    for (b, (v, t)) in x.magnitudes.iter().zip(&x.angles).enumerate() {
        let _ = writeln!(out, "{i},{b},{v},{t}");
    }
}

pub fn save_dataset(sys: &PowerSystem, ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("manifest.txt"), manifest_text(ds))?;
    let mut placement = String::from("kind,location,direction,variance\n");
    for s in &ds.recipe.slots {
        let (loc, dir_) = format_location(sys, &s.location);
        let _ = writeln!(placement, "{},{loc},{dir_},{}", s.kind.as_str(), s.variance);
    }
    fs::write(dir.join("placement.csv"), placement)?;
    for name in SPLITS {
        let samples = ds.split(name).expect("split");
        let mut meas = format!("sample,{}\n", crate::measurement::CSV_HEADER);
        let mut labels = String::from("sample,bus,V,theta\n");
        let mut truth = labels.clone();
        for (i, s) in samples.iter().enumerate() {
            for (m, p) in s.measurements.iter().zip(&s.measurements.provenance) {
                let _ = writeln!(meas, "{i},{}", crate::measurement::format_row(sys, m, *p));
            }
            state_rows(&mut labels, i, &s.label);
            state_rows(&mut truth, i, &s.truth);
        }
        fs::write(dir.join(format!("{name}_measurements.csv")), meas)?;
        fs::write(dir.join(format!("{name}_labels.csv")), labels)?;
        fs::write(dir.join(format!("{name}_truth.csv")), truth)?;
    }
    Ok(())
}

fn read_states(text: &str, count: usize, n: usize, what: &str) -> Result<Vec<StateVector>> {
    let mut out = vec![StateVector::flat(n); count];
    let mut seen = vec![0usize; count];
    for (ln, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::Parse { line: ln + 1, msg: format!("malformed {what} row") };
        if f.len() != 4 {
            return Err(bad());
        }
        let i: usize = f[0].parse().map_err(|_| bad())?;
        let b: usize = f[1].parse().map_err(|_| bad())?;
        if i >= count || b >= n {
            return Err(bad());
        }
        out[i].magnitudes[b] = f[2].parse().map_err(|_| bad())?;
        out[i].angles[b] = f[3].parse().map_err(|_| bad())?;
        seen[i] += 1;
    }
    if seen.iter().any(|&c| c != n) {
        return Err(Error::Config(format!("{what} file does not cover every sample and bus")));
    }
    Ok(out)
}

/// Loads a dataset directory; the placement is re-derived from the
/// manifest seeds and checked against the stored measurements.
pub fn load_dataset(dir: &Path) -> Result<(PowerSystem, Dataset)> {
    let map = parse_manifest(&fs::read_to_string(dir.join("manifest.txt"))?)?;
    let (spec, sizes, master_seed) = manifest_recipe(&map)?;
    let sys = load_case(&spec.system)?;
    let recipe = SampleRecipe::build(&sys, spec)?;
    let n = sys.n_buses();
    let mut splits = Vec::new();
    for (name, count) in SPLITS.iter().zip([sizes.train, sizes.val, sizes.test]) {
        let text = fs::read_to_string(dir.join(format!("{name}_measurements.csv")))?;
        let mut sets = vec![MeasurementSet::new(); count];
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let i: usize = fields[0]
                .parse()
                .map_err(|_| Error::Parse { line: ln + 1, msg: "bad sample index".into() })?;
            if i >= count {
                return Err(Error::Parse { line: ln + 1, msg: format!("sample {i} out of range") });
            }
            let (m, p) = parse_row(&sys, &fields[1..], ln + 1)?;
            sets[i].push(m, p);
        }
        for (i, s) in sets.iter().enumerate() {
            let matches = s.len() == recipe.slots.len()
                && s.iter().zip(&recipe.slots).all(|(m, sl)| m.kind == sl.kind && m.location == sl.location);
            if !matches {
                return Err(Error::Config(format!("{name} sample {i} does not follow the manifest placement")));
            }
        }
        let labels = read_states(&fs::read_to_string(dir.join(format!("{name}_labels.csv")))?, count, n, "label")?;
        let truth = read_states(&fs::read_to_string(dir.join(format!("{name}_truth.csv")))?, count, n, "truth")?;
        splits.push(
            sets.into_iter()
                .zip(labels)
                .zip(truth)
                .map(|((measurements, label), truth)| Sample {
                    measurements,
                    removed: Vec::new(),
                    attacked: Vec::new(),
                    label,
                    truth,
                    scenario: Scenario::Clean,
                })
                .collect::<Vec<_>>(),
        );
    }
    let test = splits.pop().expect("test");
    let val = splits.pop().expect("val");
    let train = splits.pop().expect("train");
    Ok((sys, Dataset { recipe, master_seed, train, val, test }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matpower::ieee30;

    #[test]
    fn ieee30_recipe_counts() {
        let sys = ieee30();
        let r = SampleRecipe::build(&sys, RecipeSpec::ieee30(1)).unwrap();
        assert_eq!(r.measurement_count(), 122);
        assert_eq!(r.pmu_buses.len(), 3);
        let currents = r.slots.iter().filter(|s| s.kind == MeasurementKind::PmuCurrentMagnitude).count();
        assert_eq!(currents, 8);
        let legacy = r.slots.iter().filter(|s| !s.kind.is_phasor()).count();
        assert_eq!(legacy, 100);
    }

    #[test]
    fn variance_classes() {
        let v = NoiseVariances::default();
        assert_eq!(v.of(MeasurementKind::ActiveInjection), 1e-1);
        assert_eq!(v.of(MeasurementKind::ActiveFlow), 1e-3);
        assert_eq!(v.of(MeasurementKind::CurrentMagnitude), 1e-3);
        assert_eq!(v.of(MeasurementKind::PmuCurrentAngle), 1e-5);
    }

    #[test]
    fn rng_streams_differ_by_split_and_index() {
        let a: u64 = sample_rng(1, 0, 0).gen();
        let b: u64 = sample_rng(1, 0, 1).gen();
        let c: u64 = sample_rng(1, 1, 0).gen();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, sample_rng(1, 0, 0).gen::<u64>());
    }

    #[test]
    fn exclusion_floor_arithmetic() {
        let sys = ieee30();
        let r = SampleRecipe::build(&sys, RecipeSpec::ieee30(1)).unwrap();
        let s = generate_sample(&sys, &r, &mut sample_rng(3, 0, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(apply_exclusion(&s, 0.0, &mut rng).unwrap().removed.is_empty());
        let e = apply_exclusion(&s, 0.95, &mut rng).unwrap();
        assert_eq!(e.removed.len(), 115);
        assert_eq!(e.inputs().len(), 7);
        assert_eq!(e.label, s.label);
        assert!(apply_exclusion(&s, 0.99, &mut rng).is_err());
        assert_eq!(apply_exclusion(&s, 0.05, &mut rng).unwrap().removed.len(), 6);
    }

    #[test]
    fn scenario_tags() {
        assert_eq!(Scenario::Exclusion { fraction: 0.35 }.tag(), "exclusion-35");
        assert_eq!(Scenario::Neighborhood { pair: (3, 4) }.tag(), "neighborhood-3-4");
    }
}
