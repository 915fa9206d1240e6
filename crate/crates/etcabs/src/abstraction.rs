//! Assembly of the finite quotient system: pipeline orchestration from the
//! run configuration to states, output intervals, transitions and precision,
//! plus trace validation, Monte Carlo soundness checks and file exports.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;
use thiserror::Error;

use crate::config::RunConfig;
use crate::delta::{solve_delta_with_report, DeltaCertificate, DeltaError, DeltaSearchParams, SolveReport};
use crate::etc::{
    build_extended_field, inter_event_time_oracle, simulate_etc_trace, EtcError, EtcSystem,
    ExtendedSystem, InterEventTime, OracleParams, TraceEvent,
};
use crate::isochron::{IsochronError, MuFunction};
use crate::overapprox::{build_ball_segments, BallSegment, CertifyParams, OverapproxError};
use crate::partition::{build_cones, cones_from_matrices, region_index, Cone, PartitionError, Region};
use crate::poly::{PolyError, PolyVectorField, Polynomial};
use crate::reach::{find_upper_bound, transitions_from, ReachError, ReachParams};

pub type RegionId = (usize, usize);

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("system stage: {0}")]
    System(#[from] EtcError),
    #[error("system stage: {0}")]
    Poly(#[from] PolyError),
    #[error("delta stage: {0}")]
    Delta(#[from] DeltaError),
    #[error("isochron stage: {0}")]
    Isochron(#[from] IsochronError),
    #[error("partition stage: {0}")]
    Partition(#[from] PartitionError),
    #[error("overapproximation stage: {0}")]
    Overapprox(#[from] OverapproxError),
    #[error("reachability stage (region {region:?}): {source}")]
    Reach {
        region: RegionId,
        source: ReachError,
    },
    #[error("no certified upper bound for region {0:?} within the line-search cap")]
    UpperBoundSearchFailed(RegionId),
    #[error("innermost caps need `caps.explicit` when there is a single band")]
    CapUnderdetermined,
    #[error("scaling shortcut requires geometrically spaced times")]
    ShortcutNeedsGeometricTimes,
    #[error("abstraction JSON malformed: {0}")]
    BadJson(String),
}

/// One finite state: the region and its semi-algebraic overapproximation.
#[derive(Debug, Clone)]
pub struct AbstractionState {
    pub region: Region,
    pub segment: BallSegment,
}

/// The power quotient system plus everything needed to re-run simulation and
/// validation against it.
#[derive(Debug, Clone)]
pub struct Abstraction {
    pub system: EtcSystem,
    pub extended: ExtendedSystem,
    pub mu: MuFunction,
    pub times: Vec<f64>,
    pub cones: Vec<Cone>,
    pub states: Vec<AbstractionState>,
    pub outputs: BTreeMap<RegionId, (f64, f64)>,
    pub transitions: BTreeSet<(RegionId, RegionId)>,
    pub epsilon: f64,
    pub config_digest: String,
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub stage_seconds: Vec<(String, f64)>,
    pub warnings: Vec<String>,
    pub delta_report: Option<SolveReport>,
    pub transition_count: usize,
}

/// Run the full pipeline: certificate, manifold approximations, cones, ball
/// segments, certified upper bounds (innermost bands capped per config) and
/// the transition relation.
pub fn build_abstraction(config: &RunConfig) -> Result<(Abstraction, BuildReport), PipelineError> {
    let mut report = BuildReport {
        stage_seconds: Vec::new(),
        warnings: Vec::new(),
        delta_report: None,
        transition_count: 0,
    };
    let mut clock = Instant::now();
    let lap = |report: &mut BuildReport, name: &str, clock: &mut Instant| {
        report
            .stage_seconds
            .push((name.to_string(), clock.elapsed().as_secs_f64()));
        *clock = Instant::now();
    };

    // system
    let n = config.system.state_dim;
    let m_in = config.system.input_dim;
    let plant = PolyVectorField::new(
        config
            .system
            .plant
            .iter()
            .map(|t| Polynomial::parse(t, n + m_in))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let controller = PolyVectorField::new(
        config
            .system
            .controller
            .iter()
            .map(|t| Polynomial::parse(t, n))
            .collect::<Result<Vec<_>, _>>()?,
    );
    let sys = EtcSystem::new(
        plant,
        controller,
        config.system.sigma_sq,
        Some(config.system.alpha),
    )?;
    let ext = build_extended_field(&sys)?;
    lap(&mut report, "system", &mut clock);

    // delta certificate
    let phi = sys.triggering_polynomial();
    let dparams = DeltaSearchParams {
        lp_samples: config.delta.lp_samples,
        seed: config.seed,
        max_rounds: config.delta.max_rounds,
        coeff_cap_ratio: config.delta.coeff_cap_ratio,
        max_boxes: config.delta.max_boxes,
    };
    let (cert, dreport) = solve_delta_with_report(
        &ext,
        &phi,
        config.delta.p,
        config.delta.d,
        config.delta.z_radius,
        config.delta.epsilon,
        &dparams,
    )?;
    if dreport.used_fallback {
        report
            .warnings
            .push("delta search fell back to the constant-only certificate".to_string());
    }
    report.delta_report = Some(dreport);
    lap(&mut report, "delta", &mut clock);

    // isochron approximation
    let mu = MuFunction::new(cert, config.isochron.rho, sys.alpha, sys.theta)?;
    lap(&mut report, "isochron", &mut clock);

    // cones
    let cones = match (&config.cones.matrices, config.cones.count) {
        (Some(mats), _) => cones_from_matrices(mats.clone())?,
        (None, Some(count)) => build_cones(count, n)?,
        (None, None) => build_cones(16, n)?,
    };
    lap(&mut report, "cones", &mut clock);

    // ball segments
    let cparams = CertifyParams::default();
    let segments = build_ball_segments(
        &mu,
        &cones,
        &config.times,
        config.overapprox.tol,
        config.overapprox.seed_directions,
        &cparams,
    )?;
    lap(&mut report, "segments", &mut clock);

    // upper bounds
    let q = config.times.len();
    let rparams = ReachParams {
        grid_radial: config.reach.grid_radial,
        grid_angular: config.reach.grid_angular,
        growth_cap: config.reach.growth_cap,
        max_steps: config.reach.max_steps,
        diameter_cap: config.reach.diameter_cap,
    };
    let shortcut = config.reach.use_scaling_shortcut;
    if shortcut && !times_geometric(&config.times) {
        return Err(PipelineError::ShortcutNeedsGeometricTimes);
    }
    let searched_bands: Vec<usize> = if shortcut {
        vec![1]
    } else {
        (1..q).collect()
    };
    let mut search_jobs: Vec<RegionId> = Vec::new();
    for &i in &searched_bands {
        if i < q {
            for c in &cones {
                search_jobs.push((i, c.index));
            }
        }
    }
    let searched: BTreeMap<RegionId, Option<f64>> = search_jobs
        .par_iter()
        .map(|&(i, j)| {
            let seg = &segments[&(i, j)];
            let cone = &cones[j - 1];
            let tau_lower = config.times[i - 1];
            let ub = find_upper_bound(
                &ext,
                seg,
                cone,
                tau_lower,
                tau_lower * config.reach.line_search_cap_factor,
                &sys,
                &rparams,
            );
            ((i, j), ub)
        })
        .collect();
    let mut upper: BTreeMap<RegionId, f64> = BTreeMap::new();
    for (&(i, j), ub) in &searched {
        upper.insert((i, j), ub.ok_or(PipelineError::UpperBoundSearchFailed((i, j)))?);
    }
    if shortcut {
        // geometric grid: upper bounds of deeper bands scale with the time ratio
        let g = config.times[1] / config.times[0];
        for i in 2..q {
            for c in &cones {
                let base = upper[&(1, c.index)];
                upper.insert((i, c.index), base * g.powi(i as i32 - 1));
            }
        }
    }
    // innermost caps
    let explicit = config.caps.explicit.clone().unwrap_or_default();
    if q == 1 && explicit.len() < cones.len() {
        return Err(PipelineError::CapUnderdetermined);
    }
    let median_prev = if q >= 2 {
        let mut vals: Vec<f64> = cones.iter().map(|c| upper[&(q - 1, c.index)]).collect();
        vals.sort_by(f64::total_cmp);
        let k = vals.len();
        if k % 2 == 1 {
            vals[k / 2]
        } else {
            0.5 * (vals[k / 2 - 1] + vals[k / 2])
        }
    } else {
        0.0
    };
    for c in &cones {
        let cap = explicit
            .get(&c.index.to_string())
            .copied()
            .unwrap_or(config.caps.kappa * median_prev)
            .max(config.times[q - 1]);
        upper.insert((q, c.index), cap);
    }
    lap(&mut report, "upper_bounds", &mut clock);

    // transitions
    let all_regions: Vec<RegionId> = segments.keys().copied().collect();
    let per_region: Vec<(RegionId, BTreeSet<RegionId>)> = if shortcut {
        // flowpipes of band 1 scale to every certified band; the innermost
        // band is computed directly since its cap is arbitrary
        let mut jobs: Vec<RegionId> = cones.iter().map(|c| (1, c.index)).collect();
        jobs.extend(cones.iter().map(|c| (q, c.index)));
        let computed: BTreeMap<RegionId, BTreeSet<RegionId>> = jobs
            .par_iter()
            .map(|&(i, j)| {
                let seg = &segments[&(i, j)];
                let cone = &cones[j - 1];
                let interval = (config.times[i - 1], upper[&(i, j)]);
                let t = transitions_from(
                    &ext, (i, j), seg, cone, interval, &segments, &cones, &rparams,
                )
                .map_err(|source| PipelineError::Reach {
                    region: (i, j),
                    source,
                });
                ((i, j), t)
            })
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .map(|(k, v)| v.map(|t| (k, t)))
            .collect::<Result<_, _>>()?;
        let g = config.times[1] / config.times[0];
        let lam = g.powf(-1.0 / sys.alpha as f64);
        let mut out: Vec<(RegionId, BTreeSet<RegionId>)> = Vec::new();
        for c in &cones {
            let base = &computed[&(1, c.index)];
            out.push(((1, c.index), base.clone()));
            for i in 2..q {
                // scale the band-1 flowpipe by lambda^(i-1): equivalently
                // rescale every target segment and re-test
                let scale = lam.powi(i as i32 - 1);
                let seg = &segments[&(i, c.index)];
                let cone = &cones[c.index - 1];
                let interval = (config.times[i - 1], upper[&(i, c.index)]);
                let scaled = scaled_transitions(
                    &ext, seg, cone, interval, scale, &segments, &cones, &rparams,
                )
                .map_err(|source| PipelineError::Reach {
                    region: (i, c.index),
                    source,
                })?;
                out.push(((i, c.index), scaled));
            }
            out.push(((q, c.index), computed[&(q, c.index)].clone()));
        }
        out
    } else {
        all_regions
            .par_iter()
            .map(|&(i, j)| {
                let seg = &segments[&(i, j)];
                let cone = &cones[j - 1];
                let interval = (config.times[i - 1], upper[&(i, j)]);
                let t = transitions_from(
                    &ext, (i, j), seg, cone, interval, &segments, &cones, &rparams,
                )
                .map_err(|source| PipelineError::Reach {
                    region: (i, j),
                    source,
                });
                ((i, j), t)
            })
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .map(|(k, v)| v.map(|t| (k, t)))
            .collect::<Result<_, _>>()?
    };
    let mut transitions = BTreeSet::new();
    for (src, targets) in &per_region {
        for dst in targets {
            transitions.insert((*src, *dst));
        }
    }
    report.transition_count = transitions.len();
    lap(&mut report, "transitions", &mut clock);

    // assemble
    let mut states = Vec::new();
    let mut outputs = BTreeMap::new();
    for (&(i, j), seg) in &segments {
        states.push(AbstractionState {
            region: Region {
                band: i,
                cone: j,
                tau_lower: config.times[i - 1],
            },
            segment: seg.clone(),
        });
        outputs.insert((i, j), (config.times[i - 1], upper[&(i, j)]));
    }
    let abstraction = Abstraction {
        system: sys,
        extended: ext,
        mu,
        times: config.times.clone(),
        cones,
        states,
        outputs: outputs.clone(),
        transitions,
        epsilon: outputs.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max),
        config_digest: config.digest(),
    };
    lap(&mut report, "assemble", &mut clock);
    Ok((abstraction, report))
}

fn times_geometric(times: &[f64]) -> bool {
    if times.len() < 3 {
        return true;
    }
    let g = times[1] / times[0];
    times
        .windows(2)
        .all(|w| ((w[1] / w[0]) / g - 1.0).abs() < 1e-9)
}

/// Transition test for a segment that is an exact `scale`-multiple of a
/// band-1 segment: flows of homogeneous systems scale, so the band-1
/// flowpipe boxes scaled by `scale` cover this segment's reachable states.
#[allow(clippy::too_many_arguments)]
fn scaled_transitions(
    ext: &ExtendedSystem,
    seg: &BallSegment,
    cone: &Cone,
    interval: (f64, f64),
    scale: f64,
    all_segments: &BTreeMap<RegionId, BallSegment>,
    cones: &[Cone],
    params: &ReachParams,
) -> Result<BTreeSet<RegionId>, ReachError> {
    use crate::interval::Interval;
    use crate::reach::{box_intersects_segment, flowpipe, initial_cells};
    let (tau_lo, tau_hi) = interval;
    // integrate the unscaled copy over the unscaled interval
    let base_seg = BallSegment {
        cone: seg.cone,
        r_inner: seg.r_inner / scale,
        r_outer: seg.r_outer / scale,
    };
    let alpha_pow = |t: f64| t * scale.powi(2); // lambda^alpha with alpha read from times
    let _ = alpha_pow;
    let init = initial_cells(&base_seg, cone, params)?;
    let res = flowpipe(ext, &init, 0.0, tau_hi / (scale * scale), params)?;
    let lo_unscaled = tau_lo / (scale * scale);
    let hi_unscaled = tau_hi / (scale * scale);
    let mut out = BTreeSet::new();
    let relevant: Vec<_> = res
        .segments
        .iter()
        .filter(|s| s.t_end >= lo_unscaled && s.t_start <= hi_unscaled)
        .collect();
    for (key, target) in all_segments {
        let target_cone = &cones[target.cone - 1];
        let hit = relevant.iter().any(|s| {
            let x = Interval::new(s.enclosure[0].lo * scale, s.enclosure[0].hi * scale);
            let y = Interval::new(s.enclosure[1].lo * scale, s.enclosure[1].hi * scale);
            box_intersects_segment(&x, &y, target_cone, target)
        });
        if hit {
            out.insert(*key);
        }
    }
    Ok(out)
}

/// Maximum output-interval length: the precision bound of the approximate
/// simulation in the interval-output case.
pub fn precision(a: &Abstraction) -> f64 {
    a.outputs.values().map(|(lo, hi)| hi - lo).fold(0.0, f64::max)
}

impl Abstraction {
    pub fn classify(&self, x: &[f64]) -> Option<RegionId> {
        region_index(&self.mu, &self.cones, &self.times, x).ok().flatten()
    }

    /// The forced-sampling cap for innermost regions, none otherwise.
    pub fn innermost_cap(&self, region: RegionId) -> Option<f64> {
        if region.0 == self.times.len() {
            self.outputs.get(&region).map(|&(_, hi)| hi)
        } else {
            None
        }
    }

    pub fn default_oracle_params(&self) -> OracleParams {
        let max_upper = self
            .outputs
            .values()
            .map(|&(_, hi)| hi)
            .fold(0.0, f64::max);
        OracleParams {
            abs_tol: 1e-9,
            t_cap: 10.0 * max_upper,
            max_step: self.times[0] / 10.0,
        }
    }

    /// Simulate the sample-and-hold loop under this abstraction's innermost
    /// caps, classifying each sample.
    pub fn simulate(
        &self,
        x0: &[f64],
        duration: f64,
        params: &OracleParams,
    ) -> Result<Vec<TraceEvent>, EtcError> {
        simulate_etc_trace(
            &self.system,
            &self.extended,
            &|x| self.classify(x),
            &|r| self.innermost_cap(r),
            x0,
            duration,
            params,
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub events_checked: usize,
    /// (event index, inter-event time, violated interval)
    pub time_violations: Vec<(usize, f64, (f64, f64))>,
    /// consecutive region pairs absent from the transition relation
    pub path_violations: Vec<(RegionId, RegionId)>,
    /// events whose sample state is outside the covered bands
    pub coverage_violations: Vec<usize>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.time_violations.is_empty()
            && self.path_violations.is_empty()
            && self.coverage_violations.is_empty()
    }
}

/// Check a simulated trace against the abstraction: every inter-event time
/// inside its source region's output interval and every consecutive region
/// pair present as a transition.
pub fn validate_trace(a: &Abstraction, trace: &[TraceEvent]) -> ValidationReport {
    let mut report = ValidationReport::default();
    let slack = 1e-9;
    let mut prev_region: Option<RegionId> = None;
    for (k, ev) in trace.iter().enumerate() {
        report.events_checked += 1;
        let region = a.classify(&ev.sample_state);
        match region {
            None => report.coverage_violations.push(k),
            Some(r) => {
                let (lo, hi) = a.outputs[&r];
                if ev.inter_event_time < lo - slack || ev.inter_event_time > hi + slack {
                    report.time_violations.push((k, ev.inter_event_time, (lo, hi)));
                }
                if let Some(p) = prev_region {
                    if !a.transitions.contains(&(p, r)) {
                        report.path_violations.push((p, r));
                    }
                }
            }
        }
        prev_region = region;
    }
    report
}

#[derive(Debug, Clone, Default)]
pub struct McReport {
    pub samples_per_region: usize,
    pub regions_checked: usize,
    /// (region, sample, oracle tau) outside the output interval
    pub time_violations: Vec<(RegionId, Vec<f64>, f64)>,
    /// (source, observed successor) absent from the transition relation
    pub missing_edges: Vec<(RegionId, RegionId)>,
    /// successors that left the covered bands (domain restriction, not a
    /// soundness violation)
    pub successors_outside: usize,
    pub worst_lower_margin: f64,
    pub worst_upper_margin: f64,
}

impl McReport {
    pub fn passed(&self) -> bool {
        self.time_violations.is_empty() && self.missing_edges.is_empty()
    }
}

/// Uniform sample inside region (i, j): area-uniform draws from the ball
/// segment, rejected until the band classification matches.
pub fn sample_region(
    a: &Abstraction,
    region: RegionId,
    rng: &mut impl rand::Rng,
) -> Option<Vec<f64>> {
    let seg = &a.states.iter().find(|s| {
        s.region.band == region.0 && s.region.cone == region.1
    })?.segment;
    let cone = &a.cones[region.1 - 1];
    let (alo, ahi) = cone.angular?;
    for _ in 0..20_000 {
        let u: f64 = rng.gen_range(0.0..1.0);
        let r = (seg.r_inner * seg.r_inner
            + u * (seg.r_outer * seg.r_outer - seg.r_inner * seg.r_inner))
            .sqrt();
        let ang = rng.gen_range(alo..ahi);
        let x = vec![r * ang.cos(), r * ang.sin()];
        if r == 0.0 {
            continue;
        }
        if a.classify(&x) == Some(region) {
            return Some(x);
        }
    }
    None
}

/// Monte Carlo soundness suite: per-region containment of oracle inter-event
/// times in the output intervals (innermost bands: lower bound plus cap
/// semantics) and completeness of the transition relation on observed
/// successors.
type McRow = (
    Option<(RegionId, Vec<f64>, f64)>,
    Option<(RegionId, RegionId)>,
    bool,
    f64,
    f64,
);

pub fn monte_carlo_validate(a: &Abstraction, samples_per_region: usize, seed: u64) -> McReport {
    use rand::SeedableRng;
    let params = a.default_oracle_params();
    let q = a.times.len();
    let per_region: Vec<(RegionId, Vec<McRow>)> = a
        .outputs
        .keys()
        .par_bridge()
        .map(|&region| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(
                seed ^ ((region.0 as u64) << 32) ^ region.1 as u64,
            );
            let (lo, hi) = a.outputs[&region];
            let innermost = region.0 == q;
            let mut rows = Vec::with_capacity(samples_per_region);
            for _ in 0..samples_per_region {
                let x = match sample_region(a, region, &mut rng) {
                    Some(x) => x,
                    None => continue,
                };
                let outcome = inter_event_time_oracle(&a.system, &a.extended, &x, &params);
                let (tau_natural, state) = match outcome {
                    Ok(InterEventTime::Triggered { tau, state }) => (Some(tau), state),
                    Ok(InterEventTime::Capped { state }) => (None, state),
                    Err(_) => continue,
                };
                let mut time_viol = None;
                let mut lower_margin = f64::INFINITY;
                let mut upper_margin = f64::INFINITY;
                match tau_natural {
                    Some(tau) => {
                        lower_margin = tau - lo;
                        if innermost {
                            // only the lower bound binds; the cap forces
                            // sampling at hi when tau exceeds it
                            if tau < lo - 1e-6 {
                                time_viol = Some((region, x.clone(), tau));
                            }
                        } else {
                            upper_margin = hi - tau;
                            if tau < lo - 1e-6 || tau > hi + 1e-6 {
                                time_viol = Some((region, x.clone(), tau));
                            }
                        }
                    }
                    None => {
                        // no triggering before the horizon: sound only for
                        // innermost regions, where the cap binds
                        if !innermost {
                            time_viol = Some((region, x.clone(), f64::INFINITY));
                        }
                    }
                }
                // observed successor: natural triggering or the forced cap
                let successor_state: Vec<f64> = match tau_natural {
                    Some(tau) if !innermost || tau <= hi => state[..a.system.n].to_vec(),
                    _ => {
                        // forced resample at the cap
                        match resample_at(a, &x, hi) {
                            Some(s) => s,
                            None => continue,
                        }
                    }
                };
                let mut edge_viol = None;
                let mut outside = false;
                match a.classify(&successor_state) {
                    Some(succ) => {
                        if !a.transitions.contains(&(region, succ)) {
                            edge_viol = Some((region, succ));
                        }
                    }
                    None => outside = true,
                }
                rows.push((time_viol, edge_viol, outside, lower_margin, upper_margin));
            }
            (region, rows)
        })
        .collect();
    let mut report = McReport {
        samples_per_region,
        ..Default::default()
    };
    report.worst_lower_margin = f64::INFINITY;
    report.worst_upper_margin = f64::INFINITY;
    for (_, rows) in per_region {
        report.regions_checked += 1;
        for (tv, ev, outside, lm, um) in rows {
            if let Some(v) = tv {
                report.time_violations.push(v);
            }
            if let Some(e) = ev {
                report.missing_edges.push(e);
            }
            if outside {
                report.successors_outside += 1;
            }
            report.worst_lower_margin = report.worst_lower_margin.min(lm);
            report.worst_upper_margin = report.worst_upper_margin.min(um);
        }
    }
    report.missing_edges.sort();
    report.missing_edges.dedup();
    report
}

fn resample_at(a: &Abstraction, x: &[f64], tau: f64) -> Option<Vec<f64>> {
    use crate::etc::FieldEval;
    use crate::ode::{integrate_to, OdeOptions};
    let eval = FieldEval::new(&a.extended.field);
    let f = move |y: &[f64], dy: &mut [f64]| eval.eval_into(y, dy);
    let mut y0 = vec![0.0; 2 * a.system.n];
    y0[..a.system.n].copy_from_slice(x);
    integrate_to(&f, &y0, 0.0, tau, &OdeOptions::default())
        .ok()
        .map(|y| y[..a.system.n].to_vec())
}

// -- serialization ----------------------------------------------------------

impl Abstraction {
    /// Full-model JSON export; deterministic for a given abstraction.
    pub fn to_json(&self) -> serde_json::Value {
        let states: Vec<serde_json::Value> = self
            .states
            .iter()
            .map(|s| {
                json!({
                    "band": s.region.band,
                    "cone": s.region.cone,
                    "tau_lower": s.region.tau_lower,
                    "r_inner": s.segment.r_inner,
                    "r_outer": s.segment.r_outer,
                })
            })
            .collect();
        let outputs: Vec<serde_json::Value> = self
            .outputs
            .iter()
            .map(|(&(i, j), &(lo, hi))| json!([i, j, lo, hi]))
            .collect();
        let transitions: Vec<serde_json::Value> = self
            .transitions
            .iter()
            .map(|&((a, b), (c, d))| json!([a, b, c, d]))
            .collect();
        let cones: Vec<serde_json::Value> = self
            .cones
            .iter()
            .map(|c| {
                json!({
                    "index": c.index,
                    "rows": c.rows,
                    "angular": c.angular.map(|(a, b)| vec![a, b]),
                })
            })
            .collect();
        json!({
            "schema": "etcabs-abstraction-v1",
            "config_digest": self.config_digest,
            "system": {
                "state_dim": self.system.n,
                "input_dim": self.system.controller.len(),
                "plant": self.system.plant.components().iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                "controller": self.system.controller.components().iter().map(|p| p.to_string()).collect::<Vec<_>>(),
                "sigma_sq": self.system.sigma_sq,
                "alpha": self.system.alpha,
                "theta": self.system.theta,
            },
            "certificate": self.mu.cert.to_json(),
            "rho": self.mu.rho,
            "times": self.times,
            "cones": cones,
            "states": states,
            "outputs": outputs,
            "transitions": transitions,
            "epsilon": self.epsilon,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self, PipelineError> {
        let bad = |m: &str| PipelineError::BadJson(m.to_string());
        let sysv = v.get("system").ok_or_else(|| bad("missing system"))?;
        let n = sysv["state_dim"].as_u64().ok_or_else(|| bad("state_dim"))? as usize;
        let m_in = sysv["input_dim"].as_u64().ok_or_else(|| bad("input_dim"))? as usize;
        let plant_texts: Vec<String> =
            serde_json::from_value(sysv["plant"].clone()).map_err(|e| bad(&e.to_string()))?;
        let ctrl_texts: Vec<String> =
            serde_json::from_value(sysv["controller"].clone()).map_err(|e| bad(&e.to_string()))?;
        let plant = PolyVectorField::new(
            plant_texts
                .iter()
                .map(|t| Polynomial::parse(t, n + m_in))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let controller = PolyVectorField::new(
            ctrl_texts
                .iter()
                .map(|t| Polynomial::parse(t, n))
                .collect::<Result<Vec<_>, _>>()?,
        );
        let sigma_sq = sysv["sigma_sq"].as_f64().ok_or_else(|| bad("sigma_sq"))?;
        let alpha = sysv["alpha"].as_i64().ok_or_else(|| bad("alpha"))?;
        let sys = EtcSystem::new(plant, controller, sigma_sq, Some(alpha))?;
        let ext = build_extended_field(&sys)?;
        let cert = DeltaCertificate::from_json(
            v.get("certificate").ok_or_else(|| bad("certificate"))?,
        )?;
        let rho = v["rho"].as_f64().ok_or_else(|| bad("rho"))?;
        let mu = MuFunction::new(cert, rho, sys.alpha, sys.theta)?;
        let times: Vec<f64> =
            serde_json::from_value(v["times"].clone()).map_err(|e| bad(&e.to_string()))?;
        let mut cones = Vec::new();
        for cv in v["cones"].as_array().ok_or_else(|| bad("cones"))? {
            let index = cv["index"].as_u64().ok_or_else(|| bad("cone index"))? as usize;
            let rows: Vec<Vec<f64>> =
                serde_json::from_value(cv["rows"].clone()).map_err(|e| bad(&e.to_string()))?;
            let angular: Option<Vec<f64>> =
                serde_json::from_value(cv["angular"].clone()).map_err(|e| bad(&e.to_string()))?;
            cones.push(Cone {
                index,
                rows,
                angular: angular.map(|a| (a[0], a[1])),
            });
        }
        let mut states = Vec::new();
        for sv in v["states"].as_array().ok_or_else(|| bad("states"))? {
            states.push(AbstractionState {
                region: Region {
                    band: sv["band"].as_u64().ok_or_else(|| bad("band"))? as usize,
                    cone: sv["cone"].as_u64().ok_or_else(|| bad("cone"))? as usize,
                    tau_lower: sv["tau_lower"].as_f64().ok_or_else(|| bad("tau_lower"))?,
                },
                segment: BallSegment {
                    cone: sv["cone"].as_u64().unwrap() as usize,
                    r_inner: sv["r_inner"].as_f64().ok_or_else(|| bad("r_inner"))?,
                    r_outer: sv["r_outer"].as_f64().ok_or_else(|| bad("r_outer"))?,
                },
            });
        }
        let mut outputs = BTreeMap::new();
        for ov in v["outputs"].as_array().ok_or_else(|| bad("outputs"))? {
            let row: Vec<f64> =
                serde_json::from_value(ov.clone()).map_err(|e| bad(&e.to_string()))?;
            outputs.insert((row[0] as usize, row[1] as usize), (row[2], row[3]));
        }
        let mut transitions = BTreeSet::new();
        for tv in v["transitions"].as_array().ok_or_else(|| bad("transitions"))? {
            let row: Vec<u64> =
                serde_json::from_value(tv.clone()).map_err(|e| bad(&e.to_string()))?;
            transitions.insert((
                (row[0] as usize, row[1] as usize),
                (row[2] as usize, row[3] as usize),
            ));
        }
        Ok(Abstraction {
            system: sys,
            extended: ext,
            mu,
            times,
            cones,
            states,
            outputs,
            transitions,
            epsilon: v["epsilon"].as_f64().ok_or_else(|| bad("epsilon"))?,
            config_digest: v["config_digest"]
                .as_str()
                .ok_or_else(|| bad("config_digest"))?
                .to_string(),
        })
    }

    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph abstraction {\n  rankdir=LR;\n");
        for s in &self.states {
            let key = (s.region.band, s.region.cone);
            let (lo, hi) = self.outputs[&key];
            out.push_str(&format!(
                "  r_{}_{} [label=\"({},{}) [{}, {}]\"];\n",
                key.0, key.1, key.0, key.1, lo, hi
            ));
        }
        for &((a, b), (c, d)) in &self.transitions {
            out.push_str(&format!("  r_{a}_{b} -> r_{c}_{d};\n"));
        }
        out.push_str("}\n");
        out
    }

    pub fn to_csv_bounds(&self) -> String {
        let mut out = String::from("band,cone,tau_lower,tau_upper\n");
        for (&(i, j), &(lo, hi)) in &self.outputs {
            out.push_str(&format!("{i},{j},{lo},{hi}\n"));
        }
        out
    }

    pub fn to_csv_transitions(&self) -> String {
        let mut out = String::from("src_band,src_cone,dst_band,dst_cone\n");
        for &((a, b), (c, d)) in &self.transitions {
            out.push_str(&format!("{a},{b},{c},{d}\n"));
        }
        out
    }

    /// Serialize in one of the supported formats.
    pub fn export(&self, format: &str) -> Result<Vec<u8>, PipelineError> {
        match format {
            "json" => Ok(format!("{:#}\n", self.to_json()).into_bytes()),
            "dot" => Ok(self.to_dot().into_bytes()),
            "csv-bounds" => Ok(self.to_csv_bounds().into_bytes()),
            "csv-transitions" => Ok(self.to_csv_transitions().into_bytes()),
            other => Err(PipelineError::BadJson(format!(
                "unknown export format `{other}` (expected json, dot, csv-bounds, csv-transitions)"
            ))),
        }
    }
}
