//! Certified integration of the expansion observable log|T'| against a
//! certified stationary density, excluding a tunable neighborhood E of the
//! points where the observable is unbounded.
//!
//! The integral over E is controlled by closed-form L1 bounds (exact
//! antiderivatives around the cusp and the critical point of the built-in
//! two-branch model, a linear-vanishing form for bump branches, certified
//! quadrature otherwise) times a local L-infinity bound on the true density;
//! the integral over the complement is approximated by the computed density
//! with an oscillation * L1-error remainder.

use serde::{Deserialize, Serialize};

use crate::certify::DensityEnclosure;
use crate::dynamics::{make_bz_map, MapModel};
use crate::error::Error;
use crate::interval::IntervalScalar;
use crate::noise::NoiseKernel;

/// `|∫ H v| <= (sup H - inf H)/2 * ||v||_1` for zero-average v.
pub fn zero_average_bound(
    h_sup: IntervalScalar,
    h_inf: IntervalScalar,
    v_l1: IntervalScalar,
) -> IntervalScalar {
    let half = IntervalScalar::point(0.5);
    let b = (h_sup - h_inf) * half * v_l1;
    IntervalScalar::new(0.0, b.hi().max(0.0))
}

/// Closed-form enclosure targets for the built-in two-branch model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BzPoint {
    /// Window straddling the cusp at 1/8 (validity: within 2^-6).
    Cusp,
    /// Window (x, 0.3) left of the critical point (validity: 0.2 < x).
    CriticalLeft,
    /// Window (0.3, x) right of the critical point (validity: x < 0.303).
    CriticalRight,
}

/// Enclosure of `s (log s - 1)` for `s >= 0`, with the limit value 0 at 0.
fn xlogx_minus_x(s: IntervalScalar) -> IntervalScalar {
    if s.hi() <= 0.0 {
        return IntervalScalar::ZERO;
    }
    let hi_pt = IntervalScalar::point(s.hi());
    let at_hi = hi_pt * (hi_pt.log().unwrap() - IntervalScalar::ONE);
    if s.lo() > 0.0 {
        let lo_pt = IntervalScalar::point(s.lo());
        let at_lo = lo_pt * (lo_pt.log().unwrap() - IntervalScalar::ONE);
        // s(log s - 1) is decreasing on (0, 1]; the hull of the endpoint
        // evaluations encloses the range either way.
        at_lo.hull(&at_hi)
    } else {
        at_hi.hull(&IntervalScalar::ZERO)
    }
}

/// Enclosure of `t log(a t)` for `t >= 0` (limit 0 at 0), used by the
/// linear-vanishing provider.
fn t_log_at(t: IntervalScalar, a: IntervalScalar) -> IntervalScalar {
    if t.hi() <= 0.0 {
        return IntervalScalar::ZERO;
    }
    let eval = |p: f64| {
        let t = IntervalScalar::point(p);
        t * (a * t).log().unwrap()
    };
    let at_hi = eval(t.hi());
    if t.lo() > 0.0 {
        eval(t.lo()).hull(&at_hi)
    } else {
        at_hi.hull(&IntervalScalar::ZERO)
    }
}

/// Closed-form enclosures of the signed integral of log|T'| near the
/// singular points of the built-in two-branch model.
///
/// * `Cusp`: `lo < 1/8 < hi` within 2^-6 of 1/8 (or `lo == hi`, giving 0);
///   integral of a positive integrand.
/// * `CriticalLeft`: integral over `(lo, 0.3)` for `0.2 < lo < 0.3`
///   (`hi` ignored); negative integrand.
/// * `CriticalRight`: integral over `(0.3, hi)` for `0.3 < hi <= 0.303`
///   (`lo` ignored); negative integrand.
pub fn l1_log_bounds_bz(point: BzPoint, lo: f64, hi: f64) -> Result<IntervalScalar, Error> {
    let bz = make_bz_map();
    let a = bz.params["a"];
    let c = bz.params["c"];
    let cusp = IntervalScalar::point(0.125);
    let crit = IntervalScalar::from_decimal("0.3")?;
    match point {
        BzPoint::Cusp => {
            if lo == hi {
                return Ok(IntervalScalar::ZERO);
            }
            let window = 1.0 / 64.0;
            if !(0.125 - window < lo && lo < 0.125 && 0.125 < hi && hi < 0.125 + window) {
                return Err(Error::Domain(format!(
                    "cusp window must straddle 1/8 within 2^-6, got [{lo}, {hi}]"
                )));
            }
            let u = IntervalScalar::point(lo);
            let v = IntervalScalar::point(hi);
            let two_thirds = IntervalScalar::point(2.0) / IntervalScalar::point(3.0);
            let s_left = cusp - u;
            let s_right = v - cusp;
            let main = -(two_thirds * (xlogx_minus_x(s_left) + xlogx_minus_x(s_right)))
                - (v - u) * IntervalScalar::point(3.0).log().unwrap()
                - (v.square() - u.square()) * IntervalScalar::point(0.5);
            let slack = (IntervalScalar::point(5.0).log().unwrap()
                - IntervalScalar::point(4.0).log().unwrap())
                * (v - u);
            // Integral lies in main - [0, slack].
            Ok(IntervalScalar::new(
                (main - slack).lo(),
                main.hi(),
            ))
        }
        BzPoint::CriticalLeft => {
            if !(0.2 < lo && lo < 0.3) {
                return Err(Error::Domain(format!(
                    "left window needs 0.2 < x < 0.3, got {lo}"
                )));
            }
            let x = IntervalScalar::point(lo);
            let p175 = IntervalScalar::from_decimal("0.175")?;
            let third = IntervalScalar::ONE / IntervalScalar::point(3.0);
            let two_thirds = IntervalScalar::point(2.0) / IntervalScalar::point(3.0);
            // |phi'(0.3^-)|: the tangent slope at the critical point.
            let d1 = third * (two_thirds * p175.pow_frac(-5, 3)? + p175.pow_frac(-2, 3)?);
            // Chord slope phi(x)/(0.3 - x).
            let psi = x - cusp;
            let phi = third * psi.pow_frac(-2, 3)? - a - psi.pow_frac(1, 3)?;
            let s = crit - x;
            let d2 = phi.checked_div(&s)?;
            let d = d1.hull(&d2);
            let val = (d.log()? + s.log()? - IntervalScalar::ONE) * s
                - (crit.square() - x.square()) * IntervalScalar::point(0.5);
            Ok(val)
        }
        BzPoint::CriticalRight => {
            if !(0.3 < hi && hi <= 0.303) {
                return Err(Error::Domain(format!(
                    "right window needs 0.3 < x <= 0.303, got {hi}"
                )));
            }
            let x = IntervalScalar::point(hi);
            let eps = x - crit;
            let nineteen = IntervalScalar::point(19.0);
            let ten = IntervalScalar::point(10.0);
            let head = (nineteen * c).log()?
                + nineteen * ten.log()?
                + (ten / IntervalScalar::point(3.0)).log()?
                - IntervalScalar::point(38.0);
            let x_logx = x * x.log()?;
            let c_logc = crit * crit.log()?;
            let val = head * eps + IntervalScalar::point(18.0) * (x_logx - c_logc)
                + xlogx_minus_x(eps)
                + eps
                - (IntervalScalar::point(190.0) / IntervalScalar::point(6.0)) * eps.square();
            // xlogx_minus_x gives eps(log eps - 1); adding eps restores
            // eps log eps.
            Ok(val)
        }
    }
}

/// How the L1 norm of the observable over a singular neighborhood is bounded.
#[derive(Clone, Debug)]
pub enum L1Provider {
    BzCusp,
    BzCritical,
    /// |T'| behaves like `amp * |x - s|` near the point.
    LinearVanish { amp: IntervalScalar },
    /// Certified interval quadrature (observable bounded on the window).
    Quadrature,
}

#[derive(Clone, Debug)]
pub struct SingularPoint {
    pub location: f64,
    pub provider: L1Provider,
}

/// The observable log|T'| for a map: its singular set S (finite union of
/// intervals where it is unbounded), per-point L1 bounds, and sup/inf
/// machinery on complements.
#[derive(Clone, Debug)]
pub struct ObservableSpec {
    pub map: MapModel,
    pub singular: Vec<SingularPoint>,
    /// Half-width of the S components around each singular point.
    pub s_radius: f64,
    /// Some branch has derivative identically zero: the observable equals
    /// minus infinity on a set of positive measure.
    pub minus_inf_branch: bool,
}

impl ObservableSpec {
    pub fn for_map(map: &MapModel) -> Result<Self, Error> {
        let minus_inf = map
            .branches
            .iter()
            .any(|b| matches!(b.monotonicity, crate::dynamics::Monotonicity::Constant));
        let singular = match map.id.as_str() {
            "bz" => vec![
                SingularPoint {
                    location: 0.125,
                    provider: L1Provider::BzCusp,
                },
                SingularPoint {
                    location: 0.3,
                    provider: L1Provider::BzCritical,
                },
            ],
            "toy" if !minus_inf => {
                // |g'| = 4 eps |x - 3/4| on the bump branches.
                let eps = map.params["e"];
                vec![SingularPoint {
                    location: 0.75,
                    provider: L1Provider::LinearVanish {
                        amp: IntervalScalar::point(4.0) * eps,
                    },
                }]
            }
            _ => Vec::new(),
        };
        Ok(ObservableSpec {
            map: map.clone(),
            singular,
            s_radius: 1e-4,
            minus_inf_branch: minus_inf,
        })
    }

    /// The singular set S as sorted disjoint intervals.
    pub fn singular_set(&self) -> Vec<(f64, f64)> {
        self.singular
            .iter()
            .map(|p| {
                (
                    (p.location - self.s_radius).max(0.0),
                    (p.location + self.s_radius).min(1.0),
                )
            })
            .collect()
    }

    /// Certified upper bound on ||log|T'|||_{L1} over `[lo, hi]` around the
    /// singular point `p`.
    pub fn l1_over(&self, p: &SingularPoint, lo: f64, hi: f64) -> Result<IntervalScalar, Error> {
        match &p.provider {
            L1Provider::BzCusp => {
                let v = l1_log_bounds_bz(BzPoint::Cusp, lo, hi)?;
                // Positive integrand on the window.
                Ok(IntervalScalar::new(v.lo().max(0.0), v.hi().max(0.0)))
            }
            L1Provider::BzCritical => {
                let left = l1_log_bounds_bz(BzPoint::CriticalLeft, lo, hi)?;
                let right = l1_log_bounds_bz(BzPoint::CriticalRight, lo, hi)?;
                // Negative integrand on both sides.
                let v = -(left + right);
                Ok(IntervalScalar::new(v.lo().max(0.0), v.hi().max(0.0)))
            }
            L1Provider::LinearVanish { amp } => {
                let rl = IntervalScalar::point((p.location - lo).max(0.0));
                let rr = IntervalScalar::point((hi - p.location).max(0.0));
                if (*amp * rl.max_i(&rr)).hi() >= 1.0 {
                    return Err(Error::Domain(
                        "linear-vanishing window too wide: amp * r >= 1".into(),
                    ));
                }
                // Integral of -log(amp t) over [0, r] equals r - r log(amp r).
                let side = |r: IntervalScalar| r - t_log_at(r, *amp);
                let v = side(rl) + side(rr);
                Ok(IntervalScalar::new(v.lo().max(0.0), v.hi().max(0.0)))
            }
            L1Provider::Quadrature => self.quadrature_l1(lo, hi, 16),
        }
    }

    fn quadrature_l1(&self, lo: f64, hi: f64, depth: u32) -> Result<IntervalScalar, Error> {
        fn rec(
            map: &MapModel,
            piece: IntervalScalar,
            depth: u32,
        ) -> Result<IntervalScalar, Error> {
            match map.log_abs_tprime(piece) {
                Ok(h) if h.width() < 0.05 || depth == 0 => {
                    Ok(h.abs() * IntervalScalar::point(piece.width()))
                }
                Err(e) if depth == 0 => Err(e),
                _ => {
                    let (l, r) = piece.bisect();
                    Ok(rec(map, l, depth - 1)? + rec(map, r, depth - 1)?)
                }
            }
        }
        rec(&self.map, IntervalScalar::new(lo, hi), depth)
    }

    /// Certified (inf lower bound, sup upper bound) of log|T'| over the
    /// complement of `e` in [0,1], by adaptive subdivision.
    pub fn h_range_on_complement(
        &self,
        e: &[(f64, f64)],
        depth: u32,
    ) -> Result<(f64, f64), Error> {
        let mut inf = f64::INFINITY;
        let mut sup = f64::NEG_INFINITY;
        for (lo, hi) in complement(e) {
            let (l, s) = self.h_range_piece(IntervalScalar::new(lo, hi), depth)?;
            inf = inf.min(l);
            sup = sup.max(s);
        }
        if !inf.is_finite() || !sup.is_finite() {
            return Err(Error::UnboundedObservable(format!(
                "no finite range over the complement of {e:?}"
            )));
        }
        Ok((inf, sup))
    }

    fn h_range_piece(&self, piece: IntervalScalar, depth: u32) -> Result<(f64, f64), Error> {
        match self.map.log_abs_tprime(piece) {
            Ok(h) if depth == 0 || h.width() <= 0.02 * (1.0 + h.hi().abs().max(h.lo().abs())) => {
                Ok((h.lo(), h.hi()))
            }
            Err(_) if depth == 0 => Ok((f64::NEG_INFINITY, f64::INFINITY)),
            _ => {
                let (l, r) = piece.bisect();
                let (al, as_) = self.h_range_piece(l, depth - 1)?;
                let (bl, bs) = self.h_range_piece(r, depth - 1)?;
                Ok((al.min(bl), as_.max(bs)))
            }
        }
    }
}

/// Complement of sorted disjoint `[lo, hi]` components inside [0,1].
fn complement(e: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut sorted = e.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = Vec::new();
    let mut cursor = 0.0;
    for (lo, hi) in sorted {
        if lo > cursor {
            out.push((cursor, lo));
        }
        cursor = cursor.max(hi);
    }
    if cursor < 1.0 {
        out.push((cursor, 1.0));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Negative,
    Positive,
    Indeterminate,
    Failed,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Negative => write!(f, "negative"),
            Verdict::Positive => write!(f, "positive"),
            Verdict::Indeterminate => write!(f, "indeterminate"),
            Verdict::Failed => write!(f, "failed"),
        }
    }
}

/// Certified enclosure of the average of log|T'| against the stationary
/// density, with its error breakdown.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovEnclosure {
    pub lambda: IntervalScalar,
    pub verdict: Verdict,
    /// Chosen excluded neighborhood (per singular point).
    pub e_components: Vec<(f64, f64)>,
    /// Integral of h f~ over the complement of E.
    pub main: IntervalScalar,
    /// ||h||_{L1(E)} * sup_E f bound.
    pub e_term: f64,
    /// Oscillation term (sup - inf)/2 * ||f - f~||_1.
    pub diff_term: f64,
}

fn verdict_of(lambda: &IntervalScalar) -> Verdict {
    if lambda.hi() < 0.0 {
        Verdict::Negative
    } else if lambda.lo() > 0.0 {
        Verdict::Positive
    } else {
        Verdict::Indeterminate
    }
}

/// Default ladder of candidate neighborhood radii (octave steps).
pub fn default_radius_ladder() -> Vec<f64> {
    (7..=16).map(|p| 0.5f64.powi(p)).collect()
}

/// Computes the tightest certified Lyapunov enclosure over a ladder of
/// candidate excluded neighborhoods. Every candidate produces a valid
/// enclosure; the narrowest is returned.
///
/// The excluded set always contains the complement of the reach set
/// `T([0,1]) + [-xi/2, xi/2]`, where the true stationary density vanishes:
/// the observable may be arbitrarily negative there at no cost.
pub fn estimate_lyapunov(
    density: &DensityEnclosure,
    spec: &ObservableSpec,
    kernel: &NoiseKernel,
    candidates: &[f64],
) -> Result<LyapunovEnclosure, Error> {
    if spec.minus_inf_branch {
        return Err(Error::UnboundedObservable(
            "a branch has derivative identically zero; the exponent is -infinity".into(),
        ));
    }
    let range = spec.map.range_enclosure()?;
    let half = kernel.support_half_width().hi();
    let reach = (
        (range.lo() - half).max(0.0),
        (range.hi() + half).min(1.0),
    );
    let mut best: Option<LyapunovEnclosure> = None;
    let mut last_err: Option<Error> = None;
    let radii: Vec<f64> = if spec.singular.is_empty() {
        vec![0.0]
    } else {
        candidates
            .iter()
            .copied()
            .filter(|r| *r >= spec.s_radius)
            .collect()
    };
    for r in radii {
        match estimate_with_radius(density, spec, reach, r) {
            Ok(enc) => {
                let keep = match &best {
                    None => true,
                    Some(b) => enc.lambda.width() < b.lambda.width(),
                };
                if keep {
                    best = Some(enc);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| {
        last_err.unwrap_or_else(|| {
            Error::UnboundedObservable("no candidate neighborhood succeeded".into())
        })
    })
}

fn estimate_with_radius(
    density: &DensityEnclosure,
    spec: &ObservableSpec,
    reach: (f64, f64),
    radius: f64,
) -> Result<LyapunovEnclosure, Error> {
    // Build E: singular windows (per-provider caps) plus the complement of
    // the reach set. The E-term sums ||h||_L1 * ||f||_inf per component; the
    // reach-complement components contribute zero because the stationary
    // density vanishes there.
    let mut e = Vec::new();
    let mut e_term_acc = IntervalScalar::ZERO;
    for p in &spec.singular {
        let (cap_l, cap_r) = match &p.provider {
            L1Provider::BzCusp => (0.5f64.powi(7), 0.5f64.powi(7)),
            L1Provider::BzCritical => (0.09, 0.00295),
            _ => (f64::INFINITY, f64::INFINITY),
        };
        let lo = p.location - radius.min(cap_l);
        let hi = p.location + radius.min(cap_r);
        let l1 = spec.l1_over(p, lo, hi)?;
        let f_sup = density_sup_over(density, lo, hi);
        e_term_acc = e_term_acc + l1 * IntervalScalar::point(f_sup);
        e.push((lo.max(0.0), hi.min(1.0)));
    }
    if reach.0 > 0.0 {
        e.push((0.0, reach.0));
    }
    if reach.1 < 1.0 {
        e.push((reach.1, 1.0));
    }
    e.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (h_inf, h_sup) = spec.h_range_on_complement(&e, 26)?;
    // The oscillation bound applies to the zero-extension of h to all of X
    // when E is nonempty.
    let (osc_lo, osc_hi) = if e.is_empty() {
        (h_inf, h_sup)
    } else {
        (h_inf.min(0.0), h_sup.max(0.0))
    };
    let half_osc = IntervalScalar::point(0.5)
        * (IntervalScalar::point(osc_hi) - IntervalScalar::point(osc_lo));

    let main = integrate_h_f(density, spec, &e)?;
    let e_term = e_term_acc.hi();
    let diff_term = (half_osc * density.l1_error).hi();
    let err = e_term + diff_term;
    let lambda = IntervalScalar::new(main.lo() - err, main.hi() + err);
    Ok(LyapunovEnclosure {
        verdict: verdict_of(&lambda),
        lambda,
        e_components: e,
        main,
        e_term,
        diff_term,
    })
}

fn density_sup_over(density: &DensityEnclosure, lo: f64, hi: f64) -> f64 {
    let pi = &density.ledgers.pi;
    let first = pi.locate(lo.max(0.0));
    let last = pi.locate(hi.min(1.0 - 1e-12));
    let mut s = 0.0f64;
    for j in first..=last {
        s = s.max(density.linf[j]);
    }
    s
}

/// Certified integral of h f~ over the complement of E.
fn integrate_h_f(
    density: &DensityEnclosure,
    spec: &ObservableSpec,
    e: &[(f64, f64)],
) -> Result<IntervalScalar, Error> {
    use rayon::prelude::*;
    let grid = &density.grid;
    let pieces = complement(e);
    let k = grid.k;
    let cells: Vec<Result<IntervalScalar, Error>> = (0..k)
        .into_par_iter()
        .map(|j| {
            let cell = grid.cell(j);
            let mut acc = IntervalScalar::ZERO;
            for &(lo, hi) in &pieces {
                let plo = cell.lo().max(lo);
                let phi = cell.hi().min(hi);
                if phi <= plo {
                    continue;
                }
                let piece = IntervalScalar::new(plo, phi);
                let h = eval_h_refined(spec, piece, 6)?;
                acc = acc
                    + h * IntervalScalar::point(density.values[j])
                        * IntervalScalar::point(phi - plo);
            }
            Ok(acc)
        })
        .collect();
    let mut total = IntervalScalar::ZERO;
    for c in cells {
        total = total + c?;
    }
    Ok(total)
}

fn eval_h_refined(
    spec: &ObservableSpec,
    piece: IntervalScalar,
    depth: u32,
) -> Result<IntervalScalar, Error> {
    match spec.map.log_abs_tprime(piece) {
        Ok(h) => Ok(h),
        Err(e) => {
            if depth == 0 || piece.width() == 0.0 {
                return Err(e);
            }
            let (l, r) = piece.bisect();
            Ok(eval_h_refined(spec, l, depth - 1)?.hull(&eval_h_refined(spec, r, depth - 1)?))
        }
    }
}

/// Serializable Lyapunov report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LyapunovReport {
    pub map_id: String,
    pub xi: IntervalScalar,
    pub enclosure: LyapunovEnclosure,
}
