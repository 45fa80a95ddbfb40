//! Piecewise monotone C² map models on the unit interval.
//!
//! A [`MapModel`] is an ordered list of monotone branches, each given by a
//! closed-form expression so that first and second derivatives are exact
//! symbolic derivatives evaluated in interval arithmetic. Branch endpoints
//! are stored as intervals: a decimal cut point like 0.3 is carried as the
//! one-ulp interval that contains it, and evaluation hulls over the branches
//! overlapping the ambiguous sliver.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::expr::{Expr, Params};
use crate::interval::IntervalScalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Monotonicity {
    Increasing,
    Decreasing,
    Constant,
}

#[derive(Clone, Debug)]
pub struct BranchSpec {
    /// Enclosure of the left domain endpoint.
    pub lo: IntervalScalar,
    /// Enclosure of the right domain endpoint.
    pub hi: IntervalScalar,
    pub monotonicity: Monotonicity,
    pub expr: Expr,
    d1: Expr,
    d2: Expr,
}

impl BranchSpec {
    pub fn new(
        lo: IntervalScalar,
        hi: IntervalScalar,
        monotonicity: Monotonicity,
        expr: Expr,
    ) -> Self {
        let d1 = expr.deriv();
        let d2 = d1.deriv();
        BranchSpec {
            lo,
            hi,
            monotonicity,
            expr,
            d1,
            d2,
        }
    }

    /// Outer domain hull, including endpoint ambiguity.
    pub fn outer(&self) -> (f64, f64) {
        (self.lo.lo(), self.hi.hi())
    }

    pub fn domain(&self) -> IntervalScalar {
        IntervalScalar::new(self.lo.lo(), self.hi.hi())
    }

    fn clamp(&self, x: IntervalScalar) -> Option<IntervalScalar> {
        x.intersection(&self.domain())
    }

    pub fn eval(&self, x: IntervalScalar, params: &Params) -> Result<IntervalScalar, Error> {
        self.expr.eval(x, params)
    }

    pub fn eval_d1(&self, x: IntervalScalar, params: &Params) -> Result<IntervalScalar, Error> {
        self.d1.eval(x, params)
    }

    pub fn eval_d2(&self, x: IntervalScalar, params: &Params) -> Result<IntervalScalar, Error> {
        self.d2.eval(x, params)
    }

    /// Range enclosure over the whole branch domain. Monotone branches use
    /// endpoint evaluation; constant branches evaluate anywhere.
    pub fn range(&self, params: &Params) -> Result<IntervalScalar, Error> {
        match self.monotonicity {
            Monotonicity::Constant => self.eval(self.domain(), params),
            _ => {
                let a = self.eval(self.lo, params)?;
                let b = self.eval(self.hi, params)?;
                Ok(a.hull(&b))
            }
        }
    }
}

/// Certified bounds on |T'| and the distortion |T''/T'^2| over a query
/// interval. An infinite `hi` endpoint is the unbounded flag: no finite
/// enclosure is obtainable over the interval (e.g. across a point where T''
/// blows up); consumers fall back to mass-based estimates.
#[derive(Clone, Copy, Debug)]
pub struct DerivativeBounds {
    pub tprime_abs_inf: IntervalScalar,
    pub tprime_abs_sup: IntervalScalar,
    pub distortion_sup: IntervalScalar,
}

impl DerivativeBounds {
    fn empty() -> Self {
        DerivativeBounds {
            tprime_abs_inf: IntervalScalar::new(f64::INFINITY, f64::INFINITY),
            tprime_abs_sup: IntervalScalar::ZERO,
            distortion_sup: IntervalScalar::ZERO,
        }
    }

    fn merge(&mut self, other: &DerivativeBounds) {
        self.tprime_abs_inf = self.tprime_abs_inf.min_i(&other.tprime_abs_inf);
        self.tprime_abs_sup = self.tprime_abs_sup.max_i(&other.tprime_abs_sup);
        self.distortion_sup = self.distortion_sup.max_i(&other.distortion_sup);
    }
}

/// Enclosure of a preimage endpoint produced by bisection: the true endpoint
/// lies in `[lo, hi]`.
#[derive(Clone, Copy, Debug)]
pub struct EndpointBracket {
    pub lo: f64,
    pub hi: f64,
}

/// Default bisection tolerance for branch inversion (interval width).
pub const INVERT_TOL: f64 = 1.0 / (1u64 << 40) as f64;
const INVERT_MAX_ITERS: usize = 128;

#[derive(Clone, Debug)]
pub struct MapModel {
    pub id: String,
    pub branches: Vec<BranchSpec>,
    pub params: Params,
}

impl MapModel {
    /// Evaluates T on an interval, hulled over all branches the interval
    /// touches (branch-cut slivers are covered by both neighbours).
    pub fn eval(&self, x: IntervalScalar) -> Result<IntervalScalar, Error> {
        let mut out: Option<IntervalScalar> = None;
        for b in &self.branches {
            if let Some(piece) = b.clamp(x) {
                let v = b.eval(piece, &self.params)?;
                out = Some(match out {
                    None => v,
                    Some(acc) => acc.hull(&v),
                });
            }
        }
        out.ok_or_else(|| Error::Domain(format!("{x} is outside [0,1]")))
    }

    /// Enclosure of T([0,1]).
    pub fn range_enclosure(&self) -> Result<IntervalScalar, Error> {
        let mut out: Option<IntervalScalar> = None;
        for b in &self.branches {
            let r = b.range(&self.params)?;
            out = Some(match out {
                None => r,
                Some(acc) => acc.hull(&r),
            });
        }
        Ok(out.expect("map without branches"))
    }

    /// log |T'| on an interval; errors when |T'| cannot be bounded away
    /// from zero on it.
    pub fn log_abs_tprime(&self, x: IntervalScalar) -> Result<IntervalScalar, Error> {
        let mut out: Option<IntervalScalar> = None;
        for b in &self.branches {
            if let Some(piece) = b.clamp(x) {
                let d = b.eval_d1(piece, &self.params)?.abs().log()?;
                out = Some(match out {
                    None => d,
                    Some(acc) => acc.hull(&d),
                });
            }
        }
        out.ok_or_else(|| Error::Domain(format!("{x} is outside [0,1]")))
    }

    /// Certified bounds on |T'| and |T''/T'^2| over `q`, subdivided at branch
    /// cuts and refined `depth` extra levels inside each branch.
    pub fn derivative_bounds(&self, q: IntervalScalar, depth: u32) -> DerivativeBounds {
        let mut out = DerivativeBounds::empty();
        let mut any = false;
        for b in &self.branches {
            if let Some(piece) = b.clamp(q) {
                if piece.width() == 0.0 && piece.lo() != q.lo() && piece.hi() != q.hi() {
                    // Degenerate overlap at an interior shared endpoint;
                    // neighbouring branches cover it.
                    continue;
                }
                any = true;
                let mut acc = DerivativeBounds::empty();
                self.derivative_bounds_rec(b, piece, depth, &mut acc);
                out.merge(&acc);
            }
        }
        if !any {
            // Query outside [0,1]: report fully unknown bounds.
            return DerivativeBounds {
                tprime_abs_inf: IntervalScalar::ZERO,
                tprime_abs_sup: IntervalScalar::new(0.0, f64::INFINITY),
                distortion_sup: IntervalScalar::new(0.0, f64::INFINITY),
            };
        }
        out
    }

    fn derivative_bounds_rec(
        &self,
        b: &BranchSpec,
        piece: IntervalScalar,
        depth: u32,
        acc: &mut DerivativeBounds,
    ) {
        if let Monotonicity::Constant = b.monotonicity {
            acc.merge(&DerivativeBounds {
                tprime_abs_inf: IntervalScalar::ZERO,
                tprime_abs_sup: IntervalScalar::ZERO,
                distortion_sup: IntervalScalar::new(0.0, f64::INFINITY),
            });
            return;
        }
        let d1 = b.eval_d1(piece, &self.params);
        let evaluable = d1.is_ok();
        if depth > 0 && piece.width() > 0.0 {
            let needs_split = match &d1 {
                Err(_) => true,
                Ok(v) => v.abs().width() > 0.25 * v.abs().hi().abs() + 1e-12,
            };
            if needs_split {
                let (l, r) = piece.bisect();
                self.derivative_bounds_rec(b, l, depth - 1, acc);
                self.derivative_bounds_rec(b, r, depth - 1, acc);
                return;
            }
        }
        if !evaluable {
            // Touches a point where the derivative expression is singular.
            acc.merge(&DerivativeBounds {
                tprime_abs_inf: IntervalScalar::ZERO,
                tprime_abs_sup: IntervalScalar::new(0.0, f64::INFINITY),
                distortion_sup: IntervalScalar::new(0.0, f64::INFINITY),
            });
            return;
        }
        let d1 = d1.unwrap().abs();
        let d1_sq = b
            .eval_d1(piece, &self.params)
            .map(|v| v.square())
            .unwrap_or_else(|_| IntervalScalar::new(0.0, f64::INFINITY));
        let distortion = match (b.eval_d2(piece, &self.params), d1_sq.lo() > 0.0) {
            (Ok(d2), true) => {
                let q = d2.abs() / d1_sq;
                IntervalScalar::new(0.0, q.hi())
            }
            _ => IntervalScalar::new(0.0, f64::INFINITY),
        };
        acc.merge(&DerivativeBounds {
            tprime_abs_inf: d1,
            tprime_abs_sup: d1,
            distortion_sup: distortion,
        });
    }

    /// Bracket of the (clamped) preimage of the point value `y` under a
    /// monotone branch: the exact endpoint of `T_b^{-1}([y, ..])` lies inside
    /// the returned bracket. Bisection with certified comparisons; width
    /// converges to `tol` except across resolution-limited flat spots.
    pub fn preimage_bracket(
        &self,
        branch: usize,
        y: f64,
        tol: f64,
    ) -> Result<EndpointBracket, Error> {
        let b = &self.branches[branch];
        let increasing = match b.monotonicity {
            Monotonicity::Increasing => true,
            Monotonicity::Decreasing => false,
            Monotonicity::Constant => {
                return Err(Error::Unsupported(
                    "preimage_bracket on a constant branch".into(),
                ))
            }
        };
        let (p, q) = b.outer();
        let (mut lo, mut hi) = (p, q);
        let probe = |m: f64| -> Result<(bool, bool), Error> {
            let t = b.eval(IntervalScalar::point(m), &self.params)?;
            let below = if increasing { t.hi() <= y } else { t.lo() >= y };
            let above = if increasing { t.lo() >= y } else { t.hi() <= y };
            Ok((below, above))
        };
        for _ in 0..INVERT_MAX_ITERS {
            if hi - lo <= tol {
                break;
            }
            let m = 0.5 * (lo + hi);
            if m <= lo || m >= hi {
                break;
            }
            let (below, above) = probe(m)?;
            if below {
                lo = m;
                continue;
            }
            if above {
                hi = m;
                continue;
            }
            // The midpoint sits inside the evaluation-resolution sliver around
            // the endpoint; quartile probes keep the bracket shrinking.
            let mut moved = false;
            let q1 = lo + 0.25 * (hi - lo);
            if q1 > lo && q1 < hi {
                let (b1, a1) = probe(q1)?;
                if b1 {
                    lo = q1;
                    moved = true;
                } else if a1 {
                    hi = q1;
                    moved = true;
                }
            }
            let q3 = lo + 0.75 * (hi - lo);
            if q3 > lo && q3 < hi {
                let (b3, a3) = probe(q3)?;
                if a3 {
                    hi = q3;
                    moved = true;
                } else if b3 {
                    lo = q3;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
        Ok(EndpointBracket { lo, hi })
    }

    /// Enclosure of `T_b^{-1}(y ∩ image)`, or `None` when `y` is certified
    /// disjoint from the branch image.
    pub fn invert_branch(
        &self,
        branch: usize,
        y: IntervalScalar,
        tol: f64,
    ) -> Result<Option<IntervalScalar>, Error> {
        let b = &self.branches[branch];
        if let Monotonicity::Constant = b.monotonicity {
            let v = b.eval(b.domain(), &self.params)?;
            return Ok(if v.intersects(&y) {
                Some(b.domain())
            } else {
                None
            });
        }
        let lo_val = b.eval(b.lo, &self.params)?;
        let hi_val = b.eval(b.hi, &self.params)?;
        let image = lo_val.hull(&hi_val);
        if y.hi() < image.lo() || y.lo() > image.hi() {
            return Ok(None);
        }
        let increasing = matches!(b.monotonicity, Monotonicity::Increasing);
        let (y_left, y_right) = if increasing {
            (y.lo(), y.hi())
        } else {
            (y.hi(), y.lo())
        };
        let left = self.preimage_bracket(branch, y_left, tol)?;
        let right = self.preimage_bracket(branch, y_right, tol)?;
        // Forward validation: the hull must map into a neighbourhood of y.
        let hull = IntervalScalar::new(left.lo.min(right.lo), right.hi.max(left.hi));
        debug_assert!(b.eval(hull, &self.params)?.intersects(&y.hull(&image)));
        Ok(Some(hull))
    }

    pub fn definition(&self) -> MapDefinition {
        MapDefinition {
            id: self.id.clone(),
            branches: self
                .branches
                .iter()
                .map(|b| BranchDefinition {
                    lo: b.lo,
                    hi: b.hi,
                    monotonicity: b.monotonicity,
                    expr: b.expr.clone(),
                })
                .collect(),
            params: self.params.clone(),
        }
    }

    /// Content hash of the map definition; identifies cached operators.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_string(&self.definition()).expect("serializable definition");
        let mut h = Sha256::new();
        h.update(json.as_bytes());
        hex_string(&h.finalize())
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializable map description: identifier, branch list with expression
/// strings, parameters as decimal interval pairs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapDefinition {
    pub id: String,
    pub branches: Vec<BranchDefinition>,
    #[serde(default)]
    pub params: BTreeMap<String, IntervalScalar>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BranchDefinition {
    pub lo: IntervalScalar,
    pub hi: IntervalScalar,
    pub monotonicity: Monotonicity,
    pub expr: Expr,
}

impl MapDefinition {
    pub fn build(self) -> Result<MapModel, Error> {
        if self.branches.is_empty() {
            return Err(Error::Config("map definition has no branches".into()));
        }
        Ok(MapModel {
            id: self.id,
            branches: self
                .branches
                .into_iter()
                .map(|b| BranchSpec::new(b.lo, b.hi, b.monotonicity, b.expr))
                .collect(),
            params: self.params,
        })
    }
}

/// A map selected by built-in name.
pub fn make_named_map(name: &str) -> Result<MapModel, Error> {
    match name {
        "bz" => Ok(make_bz_map()),
        "doubling" => Ok(make_doubling_map()),
        "tent" => Ok(make_tent_map()),
        "toy" => Ok(make_toy_map(IntervalScalar::ZERO)?),
        _ => Err(Error::Config(format!("unknown built-in map {name:?}"))),
    }
}

/// The two-piece chemical-reaction model: a cube-root branch joined at 0.3 to
/// a steep power-law branch, with parameters pinned so that T is continuous
/// and T' vanishes at the junction. The cube-root singularity at x = 1/8 is a
/// branch cut so every branch is C^2 with one-sided derivative limits.
pub fn make_bz_map() -> MapModel {
    let a = (IntervalScalar::point(19.0) / IntervalScalar::point(42.0))
        * (IntervalScalar::point(7.0) / IntervalScalar::point(5.0)).cbrt();
    let pow3_20 = IntervalScalar::point(3.0).pow_int(20).unwrap();
    let c = (IntervalScalar::point(20.0) / (pow3_20 * IntervalScalar::point(7.0)))
        * (IntervalScalar::point(7.0) / IntervalScalar::point(5.0)).cbrt()
        * (IntervalScalar::point(187.0) / IntervalScalar::point(10.0)).exp();
    let b = IntervalScalar::from_decimal_pair(
        "0.02328852830307032054478158044023918735669943648088852646123182739831022528158",
        "0.02328852830307032054478158044023918735669943648088852646123182739831022528213",
    )
    .unwrap();

    let mut params = Params::new();
    params.insert("a".into(), a);
    params.insert("b".into(), b);
    params.insert("c".into(), c);

    let left = Expr::parse("(a + cbrt(x - 0.125)) * exp(-x) + b").unwrap();
    let right = Expr::parse("c * (10 * x * exp(-10 * x / 3))^19 + b").unwrap();
    let x0 = IntervalScalar::point(0.0);
    let x_cusp = IntervalScalar::point(0.125);
    let x_crit = IntervalScalar::from_decimal("0.3").unwrap();
    let x1 = IntervalScalar::point(1.0);

    MapModel {
        id: "bz".into(),
        branches: vec![
            BranchSpec::new(x0, x_cusp, Monotonicity::Increasing, left.clone()),
            BranchSpec::new(x_cusp, x_crit, Monotonicity::Increasing, left),
            BranchSpec::new(x_crit, x1, Monotonicity::Decreasing, right),
        ],
        params,
    }
}

/// Tent-like toy model: expanding on [0, 1/2], and a third piece that is
/// constant zero for `eps = 0` or a shallow bump with |g'| <= eps otherwise.
pub fn make_toy_map(eps: IntervalScalar) -> Result<MapModel, Error> {
    if eps.lo() < 0.0 || eps.hi() >= 1.0 {
        return Err(Error::Domain(format!("toy map needs 0 <= eps < 1, got {eps}")));
    }
    let x0 = IntervalScalar::point(0.0);
    let q1 = IntervalScalar::point(0.25);
    let h = IntervalScalar::point(0.5);
    let q3 = IntervalScalar::point(0.75);
    let x1 = IntervalScalar::point(1.0);
    let mut branches = vec![
        BranchSpec::new(x0, q1, Monotonicity::Increasing, Expr::parse("2 * x")?),
        BranchSpec::new(
            q1,
            h,
            Monotonicity::Decreasing,
            Expr::parse("-2 * (x - 0.5)")?,
        ),
    ];
    let mut params = Params::new();
    if eps.hi() == 0.0 {
        branches.push(BranchSpec::new(
            h,
            x1,
            Monotonicity::Constant,
            Expr::constant(0.0),
        ));
    } else {
        params.insert("e".into(), eps);
        // g(x) = 2 eps (x - 1/2)(1 - x): g(1/2) = g(1) = 0, |g'| <= eps,
        // g' vanishing at 3/4 splits it into two monotone pieces.
        let bump = Expr::parse("2 * e * (x - 0.5) * (1 - x)")?;
        branches.push(BranchSpec::new(h, q3, Monotonicity::Increasing, bump.clone()));
        branches.push(BranchSpec::new(q3, x1, Monotonicity::Decreasing, bump));
    }
    Ok(MapModel {
        id: "toy".into(),
        branches,
        params,
    })
}

pub fn make_doubling_map() -> MapModel {
    let x0 = IntervalScalar::point(0.0);
    let h = IntervalScalar::point(0.5);
    let x1 = IntervalScalar::point(1.0);
    MapModel {
        id: "doubling".into(),
        branches: vec![
            BranchSpec::new(x0, h, Monotonicity::Increasing, Expr::parse("2 * x").unwrap()),
            BranchSpec::new(
                h,
                x1,
                Monotonicity::Increasing,
                Expr::parse("2 * x - 1").unwrap(),
            ),
        ],
        params: Params::new(),
    }
}

pub fn make_tent_map() -> MapModel {
    let x0 = IntervalScalar::point(0.0);
    let h = IntervalScalar::point(0.5);
    let x1 = IntervalScalar::point(1.0);
    MapModel {
        id: "tent".into(),
        branches: vec![
            BranchSpec::new(x0, h, Monotonicity::Increasing, Expr::parse("2 * x").unwrap()),
            BranchSpec::new(
                h,
                x1,
                Monotonicity::Decreasing,
                Expr::parse("2 - 2 * x").unwrap(),
            ),
        ],
        params: Params::new(),
    }
}

/// Sawtooth with adjustable slope, used by the perturbation oracles:
/// `s*x` on [0, 1/2] and `s*(x - 1/2)` on [1/2, 1].
pub fn make_sawtooth_map(slope: IntervalScalar) -> Result<MapModel, Error> {
    if slope.lo() <= 0.0 || slope.hi() > 2.0 {
        return Err(Error::Domain(format!(
            "sawtooth slope must lie in (0, 2], got {slope}"
        )));
    }
    let mut params = Params::new();
    params.insert("s".into(), slope);
    MapDefinition {
        id: "sawtooth".into(),
        branches: vec![
            BranchDefinition {
                lo: IntervalScalar::point(0.0),
                hi: IntervalScalar::point(0.5),
                monotonicity: Monotonicity::Increasing,
                expr: Expr::parse("s * x")?,
            },
            BranchDefinition {
                lo: IntervalScalar::point(0.5),
                hi: IntervalScalar::point(1.0),
                monotonicity: Monotonicity::Increasing,
                expr: Expr::parse("s * (x - 0.5)")?,
            },
        ],
        params,
    }
    .build()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bz_parameters_match_their_closed_forms() {
        let m = make_bz_map();
        let a = m.params["a"];
        // Probing digits of the junction-smoothing parameter.
        assert!(a.contains(0.50607356903682235));
        // The published enclosure is far tighter than one f64 ulp; ours must
        // contain it.
        let printed = IntervalScalar::from_decimal_pair(
            "0.506073569036822351319599371053047956980141736828203749380990114218225638827600",
            "0.506073569036822351319599371053047956980141736828203749380990114218225638827900",
        )
        .unwrap();
        assert!(a.contains_interval(&printed));

        let c = m.params["c"];
        assert!(c.contains(0.1212056927389751));
    }

    #[test]
    fn bz_branches_join_continuously_at_the_critical_point() {
        let m = make_bz_map();
        let cut = IntervalScalar::from_decimal("0.3").unwrap();
        let left = m.branches[1].eval(cut, &m.params).unwrap();
        let right = m.branches[2].eval(cut, &m.params).unwrap();
        assert!(left.intersects(&right), "left {left} right {right}");
    }

    #[test]
    fn bz_derivative_vanishes_at_the_junction() {
        let m = make_bz_map();
        let x = IntervalScalar::new(0.3 - 5e-7, 0.3);
        let d = m.branches[1].eval_d1(x, &m.params).unwrap();
        assert!(d.contains(0.0), "T' near 0.3 was {d}");
    }

    #[test]
    fn bz_range_stays_inside_the_unit_interval() {
        let m = make_bz_map();
        let r = m.range_enclosure().unwrap();
        assert!(r.lo() >= 0.0 && r.hi() <= 1.0, "range {r}");
    }

    #[test]
    fn toy_map_values() {
        let m = make_toy_map(IntervalScalar::ZERO).unwrap();
        assert!(m
            .eval(IntervalScalar::point(0.75))
            .unwrap()
            .contains(0.0));
        assert!(m.eval(IntervalScalar::point(0.25)).unwrap().contains(0.5));
        assert!(m
            .eval(IntervalScalar::point(0.375))
            .unwrap()
            .contains(0.25));
    }

    #[test]
    fn oracle_maps() {
        let d = make_doubling_map();
        assert!(d.eval(IntervalScalar::point(0.3)).unwrap().contains(0.6));
        let t = make_tent_map();
        assert!(t.eval(IntervalScalar::point(0.75)).unwrap().contains(0.5));
        for m in [&d, &t] {
            let b = m.derivative_bounds(IntervalScalar::new(0.1, 0.9), 2);
            assert!(b.tprime_abs_inf.contains(2.0));
            assert!(b.tprime_abs_sup.contains(2.0));
            assert!(b.distortion_sup.hi() <= 1e-9);
        }
    }

    #[test]
    fn invert_branch_examples() {
        let d = make_doubling_map();
        let pre = d
            .invert_branch(0, IntervalScalar::point(0.5), INVERT_TOL)
            .unwrap()
            .unwrap();
        assert!(pre.contains(0.25));
        assert!(pre.width() <= 1e-12);

        let bz = make_bz_map();
        let y = bz.eval(IntervalScalar::point(0.5)).unwrap();
        let pre = bz.invert_branch(2, y, INVERT_TOL).unwrap().unwrap();
        assert!(pre.contains(0.5), "preimage {pre}");

        let toy = make_toy_map(IntervalScalar::ZERO).unwrap();
        let none = toy
            .invert_branch(0, IntervalScalar::new(0.99, 1.0), INVERT_TOL)
            .unwrap();
        assert!(none.is_none());
    }

    #[test]
    fn forward_inverse_round_trip_on_random_points() {
        let maps = [make_doubling_map(), make_tent_map(), make_bz_map()];
        let mut x = 0.137f64;
        for m in &maps {
            for _ in 0..200 {
                x = (x * 987.13 + 0.017).rem_euclid(1.0);
                for (i, b) in m.branches.iter().enumerate() {
                    let (p, q) = b.outer();
                    if matches!(b.monotonicity, Monotonicity::Constant) {
                        continue;
                    }
                    let xi = p + x * (q - p);
                    // Stay in the interior.
                    let xi = xi.clamp(p + 1e-9, q - 1e-9);
                    let y = b.eval(IntervalScalar::point(xi), &m.params).unwrap();
                    let pre = m.invert_branch(i, y, INVERT_TOL).unwrap().unwrap();
                    assert!(
                        pre.contains(xi),
                        "map {} branch {i}: {xi} not in {pre}",
                        m.id
                    );
                }
            }
        }
    }

    #[test]
    fn derivative_bounds_flag_singular_cells() {
        let m = make_bz_map();
        // Interval containing the cusp: T' unbounded, distortion unbounded.
        let b = m.derivative_bounds(IntervalScalar::new(0.12, 0.13), 4);
        assert_eq!(b.tprime_abs_sup.hi(), f64::INFINITY);
        assert_eq!(b.distortion_sup.hi(), f64::INFINITY);
        // Interval containing 0.3: sup |T'| finite, inf |T'| contains 0.
        let b = m.derivative_bounds(IntervalScalar::new(0.29, 0.31), 4);
        assert!(b.tprime_abs_sup.hi().is_finite());
        assert!(b.tprime_abs_inf.contains(0.0) || b.tprime_abs_inf.lo() == 0.0);
    }

    #[test]
    fn derivative_bounds_are_inclusion_monotone() {
        let m = make_bz_map();
        let inner = IntervalScalar::new(0.4, 0.45);
        let outer = IntervalScalar::new(0.35, 0.5);
        let bi = m.derivative_bounds(inner, 3);
        let bo = m.derivative_bounds(outer, 3);
        assert!(bo.tprime_abs_inf.lo() <= bi.tprime_abs_inf.lo());
        assert!(bo.tprime_abs_sup.hi() >= bi.tprime_abs_sup.hi());
        assert!(bo.distortion_sup.hi() >= bi.distortion_sup.hi());
    }

    #[test]
    fn map_definition_round_trips_through_json() {
        let m = make_bz_map();
        let json = serde_json::to_string(&m.definition()).unwrap();
        let back: MapDefinition = serde_json::from_str(&json).unwrap();
        let m2 = back.build().unwrap();
        assert_eq!(m.content_hash(), m2.content_hash());
        let x = IntervalScalar::point(0.47);
        assert_eq!(m.eval(x).unwrap(), m2.eval(x).unwrap());
    }

    #[test]
    fn point_evaluation_lands_inside_interval_evaluation() {
        let m = make_bz_map();
        let mut x = 0.41f64;
        for _ in 0..1000 {
            x = (x * 1.61803 + 0.1).rem_euclid(1.0);
            let v = m.eval(IntervalScalar::point(x)).unwrap();
            // Plain f64 evaluation of the same closed form.
            let a = 19.0 / 42.0 * (7.0f64 / 5.0).cbrt();
            let c = 20.0 / (3.0f64.powi(20) * 7.0) * (7.0f64 / 5.0).cbrt() * (18.7f64).exp();
            let b = 0.023288528303070322;
            let point = if x <= 0.3 {
                (a + (x - 0.125).cbrt()) * (-x).exp() + b
            } else {
                c * (10.0 * x * (-10.0 * x / 3.0).exp()).powi(19) + b
            };
            assert!(
                v.lo() <= point + 1e-12 && point - 1e-12 <= v.hi(),
                "x={x} point={point} interval={v}"
            );
        }
    }
}
