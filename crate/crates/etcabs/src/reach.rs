//! Conservative reachability for the extended system: validated interval
//! flowpipes from ball-segment initial sets, terminal-time certification of
//! inter-event upper bounds, the line search for them, and derivation of the
//! region-to-region transitions.
//!
//! One step encloses the solution over [t, t+h] by bounded Picard iteration
//! (find E with B + [0,h] F(E) contained in E) and then tightens the terminal
//! set to B + h F(E). Soundness rests only on interval evaluation of the
//! field, so every trajectory from B stays inside the returned boxes.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::etc::{EtcSystem, ExtendedSystem};
use crate::interval::{box_max_width, eval_poly_interval, IBox, Interval};
use crate::overapprox::BallSegment;
use crate::partition::Cone;

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("enclosure diameter exceeded {cap} at t = {t} (initial cell {cell})")]
    EnclosureBlowup { cell: usize, t: f64, cap: f64 },
    #[error("step size underflow at t = {t} (initial cell {cell})")]
    StepUnderflow { cell: usize, t: f64 },
    #[error("cone {0} carries no angular interval; gridding is planar")]
    NoAngularData(usize),
}

/// Time slab with a box guaranteed to contain every trajectory of the
/// covered initial subset over the whole interval.
#[derive(Debug, Clone)]
pub struct FlowpipeSegment {
    pub t_start: f64,
    pub t_end: f64,
    pub enclosure: IBox,
}

#[derive(Debug, Clone)]
pub struct ReachResult {
    pub segments: Vec<FlowpipeSegment>,
    /// One box per initial cell, enclosing the reachable set at the final time.
    pub terminal_boxes: Vec<IBox>,
    /// True when every step's enclosure was self-consistent. Steps that fail
    /// validation abort with an error instead, so successful results are
    /// always sound.
    pub sound: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct ReachParams {
    pub grid_radial: usize,
    pub grid_angular: usize,
    /// Per-step growth allowance as a fraction of the current box width.
    pub growth_cap: f64,
    pub max_steps: usize,
    /// Abort when any enclosure box gets wider than this.
    pub diameter_cap: f64,
}

impl Default for ReachParams {
    fn default() -> Self {
        Self {
            grid_radial: 4,
            grid_angular: 8,
            growth_cap: 0.02,
            max_steps: 20_000,
            diameter_cap: 50.0,
        }
    }
}

/// Cover the lifted initial set {(x, 0) : x in segment} by bounding boxes of
/// a polar grid over the annulus sector.
pub fn initial_cells(
    seg: &BallSegment,
    cone: &Cone,
    params: &ReachParams,
) -> Result<Vec<IBox>, ReachError> {
    let (a_lo, a_hi) = cone.angular.ok_or(ReachError::NoAngularData(cone.index))?;
    let nr = params.grid_radial.max(1);
    let na = params.grid_angular.max(1);
    let mut cells = Vec::with_capacity(nr * na);
    for ir in 0..nr {
        let r0 = seg.r_inner + (seg.r_outer - seg.r_inner) * (ir as f64) / (nr as f64);
        let r1 = seg.r_inner + (seg.r_outer - seg.r_inner) * ((ir + 1) as f64) / (nr as f64);
        let r_iv = Interval::new(r0, r1);
        for ia in 0..na {
            let a0 = a_lo + (a_hi - a_lo) * (ia as f64) / (na as f64);
            let a1 = a_lo + (a_hi - a_lo) * ((ia + 1) as f64) / (na as f64);
            let ang = Interval::new(a0, a1);
            let x = r_iv.mul(&ang.cos_range());
            let y = r_iv.mul(&ang.sin_range());
            cells.push(vec![x, y, Interval::ZERO, Interval::ZERO]);
        }
    }
    Ok(cells)
}

fn field_box(ext: &ExtendedSystem, b: &IBox) -> Vec<Interval> {
    ext.field
        .components()
        .iter()
        .map(|p| eval_poly_interval(p, b))
        .collect()
}

/// One validated step from `b` of size at most `h`: returns the actual step
/// taken, the slab enclosure for [t, t+h], and the terminal box.
fn validated_step(
    ext: &ExtendedSystem,
    b: &IBox,
    h: f64,
    growth_cap: f64,
) -> Option<(f64, IBox, IBox)> {
    let mut h = h;
    for _ in 0..24 {
        // Picard candidate: coarse Euler hull, inflated
        let f_b = field_box(ext, b);
        let mut candidate: IBox = b
            .iter()
            .zip(&f_b)
            .map(|(bi, fi)| {
                let step = Interval::new(0.0, h).mul(fi);
                let hull = bi.hull(&bi.add(&step));
                hull.inflate(0.1 * hull.width() + 1e-14)
            })
            .collect();
        let mut contracted = false;
        for _ in 0..12 {
            let f_c = field_box(ext, &candidate);
            let image: IBox = b
                .iter()
                .zip(&f_c)
                .map(|(bi, fi)| bi.add(&Interval::new(0.0, h).mul(fi)))
                .collect();
            let contained = image
                .iter()
                .zip(&candidate)
                .all(|(im, c)| c.contains_interval(im));
            if contained {
                candidate = image;
                contracted = true;
                break;
            }
            // widen only the dimensions that failed, or the converged ones
            // would keep growing and chase the field range upward
            candidate = image
                .iter()
                .zip(&candidate)
                .map(|(im, c)| {
                    if c.contains_interval(im) {
                        *c
                    } else {
                        c.hull(im).inflate(0.05 * im.width() + 1e-14)
                    }
                })
                .collect();
        }
        if contracted {
            let f_e = field_box(ext, &candidate);
            let terminal: IBox = b
                .iter()
                .zip(&f_e)
                .map(|(bi, fi)| bi.add(&fi.scale(h)))
                .collect();
            let growth = terminal
                .iter()
                .zip(b.iter())
                .map(|(t, s)| t.width() - s.width())
                .fold(0.0, f64::max);
            let allowance = growth_cap * (box_max_width(b) + 1e-4) + 1e-12;
            if growth <= allowance {
                return Some((h, candidate, terminal));
            }
        }
        h *= 0.5;
        if h < 1e-16 {
            return None;
        }
    }
    None
}

/// Validated flowpipe of the extended system from the given initial boxes
/// over [t0, t1].
pub fn flowpipe(
    ext: &ExtendedSystem,
    init: &[IBox],
    t0: f64,
    t1: f64,
    params: &ReachParams,
) -> Result<ReachResult, ReachError> {
    assert!(t1 >= t0, "time span must be ordered");
    let mut segments = Vec::new();
    let mut terminal_boxes = Vec::with_capacity(init.len());
    if t1 == t0 {
        // zero-time reachability: the terminal set is the initial set
        terminal_boxes.extend(init.iter().cloned());
        return Ok(ReachResult {
            segments,
            terminal_boxes,
            sound: true,
        });
    }
    for (cell, b0) in init.iter().enumerate() {
        let mut t = t0;
        let mut b = b0.clone();
        let mut h = (t1 - t0) / 8.0;
        let mut steps = 0usize;
        while t < t1 {
            if steps > params.max_steps {
                return Err(ReachError::StepUnderflow { cell, t });
            }
            steps += 1;
            let h_try = h.min(t1 - t);
            let (h_used, slab, terminal) = validated_step(ext, &b, h_try, params.growth_cap)
                .ok_or(ReachError::StepUnderflow { cell, t })?;
            if box_max_width(&terminal) > params.diameter_cap {
                return Err(ReachError::EnclosureBlowup {
                    cell,
                    t,
                    cap: params.diameter_cap,
                });
            }
            segments.push(FlowpipeSegment {
                t_start: t,
                t_end: t + h_used,
                enclosure: slab,
            });
            t += h_used;
            b = terminal;
            // prefer growing back toward the nominal step
            h = (h_used * 1.5).min(t1 - t0);
        }
        terminal_boxes.push(b);
    }
    Ok(ReachResult {
        segments,
        terminal_boxes,
        sound: true,
    })
}

/// Interval evaluation of the triggering function over an extended-space box.
fn triggering_range(sys: &EtcSystem, b: &IBox) -> Interval {
    let n = sys.n;
    let mut esq = Interval::ZERO;
    let mut zsq = Interval::ZERO;
    for k in 0..n {
        zsq = zsq.add(&b[k].powi(2));
        esq = esq.add(&b[n + k].powi(2));
    }
    esq.sub(&zsq.scale(sys.sigma_sq))
}

/// Terminal-time emptiness test against the triggering sublevel set: if the
/// reachable set at `tau_max` has strictly positive triggering value in every
/// box, every point of the segment has triggered by then, so `tau_max` upper
/// bounds the segment's inter-event times. Flowpipe failures count as
/// not-certified.
pub fn certify_upper_bound(
    ext: &ExtendedSystem,
    seg: &BallSegment,
    cone: &Cone,
    tau_max: f64,
    sys: &EtcSystem,
    params: &ReachParams,
) -> bool {
    let init = match initial_cells(seg, cone, params) {
        Ok(c) => c,
        Err(_) => return false,
    };
    match flowpipe(ext, &init, 0.0, tau_max, params) {
        Ok(res) => res
            .terminal_boxes
            .iter()
            .all(|b| triggering_range(sys, b).lo > 0.0),
        Err(_) => false,
    }
}

/// Geometric-grid line search upward from `tau_lower`, refined by bisection
/// between the last failing and first certified values.
pub fn find_upper_bound(
    ext: &ExtendedSystem,
    seg: &BallSegment,
    cone: &Cone,
    tau_lower: f64,
    tau_cap: f64,
    sys: &EtcSystem,
    params: &ReachParams,
) -> Option<f64> {
    const GRID: [f64; 8] = [1.25, 1.5, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0];
    let mut last_fail = tau_lower;
    let mut first_pass = None;
    for factor in GRID {
        let tau = tau_lower * factor;
        if tau > tau_cap * (1.0 + 1e-12) {
            break;
        }
        if certify_upper_bound(ext, seg, cone, tau, sys, params) {
            first_pass = Some(tau);
            break;
        }
        last_fail = tau;
    }
    let mut hi = first_pass?;
    let mut lo = last_fail;
    while (hi - lo) / hi > 0.02 {
        let mid = 0.5 * (lo + hi);
        if certify_upper_bound(ext, seg, cone, mid, sys, params) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Exact intersection test between an axis-aligned planar box and a ball
/// segment: clip the box by the cone half-planes, then compare the norm
/// range of the resulting convex polygon against the annulus radii.
pub fn box_intersects_segment(bx: &Interval, by: &Interval, cone: &Cone, seg: &BallSegment) -> bool {
    let mut poly: Vec<[f64; 2]> = vec![
        [bx.lo, by.lo],
        [bx.hi, by.lo],
        [bx.hi, by.hi],
        [bx.lo, by.hi],
    ];
    for row in &cone.rows {
        poly = clip_halfplane(&poly, row);
        if poly.is_empty() {
            return false;
        }
    }
    let max_norm = poly
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
        .fold(0.0f64, f64::max);
    let inside = point_in_convex(&poly, [0.0, 0.0]);
    let min_norm = if inside {
        0.0
    } else {
        let k = poly.len();
        (0..k)
            .map(|i| dist_origin_segment(poly[i], poly[(i + 1) % k]))
            .fold(f64::INFINITY, f64::min)
    };
    let pad = 1e-12 * (1.0 + seg.r_outer);
    min_norm <= seg.r_outer + pad && max_norm >= seg.r_inner - pad
}

fn clip_halfplane(poly: &[[f64; 2]], row: &[f64]) -> Vec<[f64; 2]> {
    let side = |p: [f64; 2]| row[0] * p[0] + row[1] * p[1];
    let k = poly.len();
    let mut out = Vec::with_capacity(k + 2);
    for i in 0..k {
        let a = poly[i];
        let b = poly[(i + 1) % k];
        let (sa, sb) = (side(a), side(b));
        if sa >= 0.0 {
            out.push(a);
        }
        if (sa > 0.0 && sb < 0.0) || (sa < 0.0 && sb > 0.0) {
            let t = sa / (sa - sb);
            out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
        }
    }
    out
}

fn point_in_convex(poly: &[[f64; 2]], p: [f64; 2]) -> bool {
    let k = poly.len();
    if k < 3 {
        return false;
    }
    let mut sign = 0.0f64;
    for i in 0..k {
        let a = poly[i];
        let b = poly[(i + 1) % k];
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross.abs() < 1e-300 {
            continue;
        }
        if sign == 0.0 {
            sign = cross.signum();
        } else if cross.signum() != sign {
            return false;
        }
    }
    true
}

fn dist_origin_segment(a: [f64; 2], b: [f64; 2]) -> f64 {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (-(a[0] * dx + a[1] * dy) / len_sq).clamp(0.0, 1.0)
    };
    let px = a[0] + t * dx;
    let py = a[1] + t * dy;
    (px * px + py * py).sqrt()
}

/// Transition targets of one source region: every region whose ball segment
/// meets the state projection of the flowpipe over the output interval.
#[allow(clippy::too_many_arguments)]
pub fn transitions_from(
    ext: &ExtendedSystem,
    source: (usize, usize),
    seg: &BallSegment,
    cone: &Cone,
    interval: (f64, f64),
    all_segments: &BTreeMap<(usize, usize), BallSegment>,
    cones: &[Cone],
    params: &ReachParams,
) -> Result<BTreeSet<(usize, usize)>, ReachError> {
    let _ = source;
    let (tau_lo, tau_hi) = interval;
    let init = initial_cells(seg, cone, params)?;
    let res = flowpipe(ext, &init, 0.0, tau_hi, params)?;
    let mut out = BTreeSet::new();
    let relevant: Vec<&FlowpipeSegment> = res
        .segments
        .iter()
        .filter(|s| s.t_end >= tau_lo && s.t_start <= tau_hi)
        .collect();
    for (key, target) in all_segments {
        let target_cone = &cones[target.cone - 1];
        let hit = relevant.iter().any(|s| {
            box_intersects_segment(&s.enclosure[0], &s.enclosure[1], target_cone, target)
        });
        if hit {
            out.insert(*key);
        }
    }
    Ok(out)
}

/// CSV dump of flowpipe slabs for plotting and debugging.
pub fn write_flowpipe_csv<W: std::io::Write>(
    w: &mut W,
    res: &ReachResult,
) -> std::io::Result<()> {
    let dim = res
        .segments
        .first()
        .map(|s| s.enclosure.len())
        .unwrap_or(0);
    write!(w, "t_start,t_end")?;
    for k in 1..=dim {
        write!(w, ",lo{k},hi{k}")?;
    }
    writeln!(w)?;
    for s in &res.segments {
        write!(w, "{},{}", s.t_start, s.t_end)?;
        for iv in &s.enclosure {
            write!(w, ",{},{}", iv.lo, iv.hi)?;
        }
        writeln!(w)?;
    }
    Ok(())
}
