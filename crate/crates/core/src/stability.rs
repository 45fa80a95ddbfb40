//! Quantitative stability of the stationary measure and of the Lyapunov
//! exponent under perturbations of the map and of the noise amplitude.
//!
//! All bounds consume a continuum-valid contraction certificate (sum C_i,
//! alpha) plus the restricted-set constants (eta, distortion, transfer of
//! the constant function), which are re-derived here by interval subdivision
//! rather than trusted.

use serde::{Deserialize, Serialize};

use crate::contraction::ContractionCertificate;
use crate::dynamics::{MapModel, Monotonicity};
use crate::error::Error;
use crate::interval::IntervalScalar;
use crate::noise::NoiseKernel;
use crate::observable::ObservableSpec;

/// Adaptive certified supremum of an interval-evaluable function over a
/// union of intervals. Returns an upper bound (infinite when the function
/// cannot be resolved at the depth limit).
fn sup_upper<F>(f: &F, pieces: &[(f64, f64)], depth: u32) -> f64
where
    F: Fn(IntervalScalar) -> Result<IntervalScalar, Error>,
{
    fn rec<F>(f: &F, piece: IntervalScalar, depth: u32) -> f64
    where
        F: Fn(IntervalScalar) -> Result<IntervalScalar, Error>,
    {
        match f(piece) {
            Ok(v) if depth == 0 || v.width() <= 1e-4 * (1.0 + v.hi().abs()) => v.hi(),
            Err(_) if depth == 0 => f64::INFINITY,
            _ => {
                if piece.width() == 0.0 {
                    return match f(piece) {
                        Ok(v) => v.hi(),
                        Err(_) => f64::INFINITY,
                    };
                }
                let (l, r) = piece.bisect();
                rec(f, l, depth - 1).max(rec(f, r, depth - 1))
            }
        }
    }
    pieces
        .iter()
        .map(|&(lo, hi)| rec(f, IntervalScalar::new(lo, hi), depth))
        .fold(0.0f64, f64::max)
}

/// The restricted-set constants of the stability machinery, re-derived by
/// interval subdivision for a given map, restricted set S and noise size.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Setting3Verification {
    pub restricted_set: Vec<(f64, f64)>,
    pub xi: IntervalScalar,
    /// Enclosure of the forward-invariant region T([0,1]) fattened by xi/2.
    pub reach: (f64, f64),
    /// sup of |log|T'|| over reach minus S.
    pub linf_log_complement: f64,
    /// ||log|T'|||_{L1(S)}.
    pub l1_log_singular: IntervalScalar,
    /// sup of 1/|T'| over T^-1(S_xi).
    pub inv_tprime_sup: f64,
    /// sup of |T''/T'^2| over T^-1(S_xi).
    pub distortion_sup: f64,
    /// sup of L_T 1 over S_xi.
    pub transfer_one_sup: f64,
    /// Number of monotone branches.
    pub branch_count: usize,
}

/// Re-derives the restricted-set constants for `(map, S, xi)`.
pub fn verify_setting3(
    map: &MapModel,
    s: &[(f64, f64)],
    xi: IntervalScalar,
) -> Result<Setting3Verification, Error> {
    let spec = ObservableSpec::for_map(map)?;
    let half_xi = (xi * IntervalScalar::point(0.5)).hi();

    // Forward-invariant region.
    let range = map.range_enclosure()?;
    let reach = (
        (range.lo() - half_xi).max(0.0),
        (range.hi() + half_xi).min(1.0),
    );

    // sup |log T'| over reach \ S.
    let mut complement_pieces = Vec::new();
    {
        let mut cursor = reach.0;
        let mut comps = s.to_vec();
        comps.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(lo, hi) in &comps {
            if lo > cursor {
                complement_pieces.push((cursor, lo.min(reach.1)));
            }
            cursor = cursor.max(hi);
        }
        if cursor < reach.1 {
            complement_pieces.push((cursor, reach.1));
        }
    }
    let abs_log = |p: IntervalScalar| map.log_abs_tprime(p).map(|h| h.abs());
    let linf_log_complement = sup_upper(&abs_log, &complement_pieces, 40);

    // L1 of log|T'| over S via the per-point providers.
    let mut l1 = IntervalScalar::ZERO;
    for &(lo, hi) in s {
        let point = spec
            .singular
            .iter()
            .find(|p| lo <= p.location && p.location <= hi);
        match point {
            Some(p) => l1 = l1 + l1_over_component(&spec, p, lo, hi)?,
            None => {
                // No singularity inside: bound |h| * |component|.
                let sup = sup_upper(&abs_log, &[(lo, hi)], 30);
                if !sup.is_finite() {
                    return Err(Error::UnboundedObservable(format!(
                        "cannot bound the observable on [{lo}, {hi}]"
                    )));
                }
                l1 = l1 + IntervalScalar::new(0.0, sup * (hi - lo));
            }
        }
    }

    // Preimage pieces of the xi-neighborhood S_xi.
    let mut preimage = Vec::new();
    for &(lo, hi) in s {
        let comp = IntervalScalar::new((lo - xi.hi()).max(0.0), (hi + xi.hi()).min(1.0));
        for (bi, b) in map.branches.iter().enumerate() {
            if matches!(b.monotonicity, Monotonicity::Constant) {
                let v = b.eval(b.domain(), &map.params)?;
                if v.intersects(&comp) {
                    preimage.push(b.outer());
                }
                continue;
            }
            if let Some(j) = map.invert_branch(bi, comp, 0.0)? {
                preimage.push((j.lo(), j.hi()));
            }
        }
    }
    let inv_tprime = |p: IntervalScalar| -> Result<IntervalScalar, Error> {
        let d = map.derivative_bounds(p, 0).tprime_abs_inf;
        if d.lo() <= 0.0 {
            Err(Error::Domain("derivative not bounded away from zero".into()))
        } else {
            Ok(IntervalScalar::new(0.0, (1.0 / d.lo()).next_up()))
        }
    };
    let inv_tprime_sup = sup_upper(&inv_tprime, &preimage, 40);
    let distortion = |p: IntervalScalar| -> Result<IntervalScalar, Error> {
        let d = map.derivative_bounds(p, 0).distortion_sup;
        if d.hi().is_finite() {
            Ok(d)
        } else {
            Err(Error::Domain("distortion unbounded".into()))
        }
    };
    let distortion_sup = sup_upper(&distortion, &preimage, 40);

    // sup of L_T 1 over S_xi: for each refined value window, sum over
    // branches the sup of 1/|T'| on the branch preimage.
    let mut transfer_one_sup = 0.0f64;
    for &(lo, hi) in s {
        let clo = (lo - xi.hi()).max(0.0);
        let chi = (hi + xi.hi()).min(1.0);
        let parts = 64;
        for t in 0..parts {
            let ylo = clo + (chi - clo) * t as f64 / parts as f64;
            let yhi = clo + (chi - clo) * (t + 1) as f64 / parts as f64;
            let window = IntervalScalar::new(ylo, yhi);
            let mut total = 0.0f64;
            for (bi, b) in map.branches.iter().enumerate() {
                if matches!(b.monotonicity, Monotonicity::Constant) {
                    let v = b.eval(b.domain(), &map.params)?;
                    if v.intersects(&window) {
                        total = f64::INFINITY;
                    }
                    continue;
                }
                if let Some(j) = map.invert_branch(bi, window, 0.0)? {
                    total += sup_upper(&inv_tprime, &[(j.lo(), j.hi())], 24);
                }
            }
            transfer_one_sup = transfer_one_sup.max(total);
        }
    }

    Ok(Setting3Verification {
        restricted_set: s.to_vec(),
        xi,
        reach,
        linf_log_complement,
        l1_log_singular: l1,
        inv_tprime_sup,
        distortion_sup,
        transfer_one_sup,
        branch_count: map.branches.len(),
    })
}

fn l1_over_component(
    spec: &ObservableSpec,
    p: &crate::observable::SingularPoint,
    lo: f64,
    hi: f64,
) -> Result<IntervalScalar, Error> {
    spec.l1_over(p, lo, hi)
}

/// Inputs of the restricted-set stability bounds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityInputs {
    pub cert: ContractionCertificate,
    pub kernel: NoiseKernel,
    /// ||1/T'||_inf on T^-1(S_xi) (an upper bound on 1/eta).
    pub eta_inv: IntervalScalar,
    /// Distortion bound D on T^-1(S_xi).
    pub distortion: IntervalScalar,
    /// Number of simultaneous monotone branches M.
    pub branch_count: usize,
    /// ||L_T 1||_inf on S_xi.
    pub transfer_one: IntervalScalar,
    pub l1_log_singular: IntervalScalar,
    pub linf_log_complement: IntervalScalar,
    pub restricted_set: Vec<(f64, f64)>,
}

impl StabilityInputs {
    pub fn from_verification(
        cert: ContractionCertificate,
        kernel: NoiseKernel,
        ver: &Setting3Verification,
    ) -> Result<Self, Error> {
        if !ver.inv_tprime_sup.is_finite() || !ver.distortion_sup.is_finite() {
            return Err(Error::MissingPrerequisite(
                "restricted-set constants could not be bounded".into(),
            ));
        }
        Ok(StabilityInputs {
            cert,
            kernel,
            eta_inv: IntervalScalar::new(0.0, ver.inv_tprime_sup),
            distortion: IntervalScalar::new(0.0, ver.distortion_sup),
            branch_count: ver.branch_count,
            transfer_one: IntervalScalar::new(0.0, ver.transfer_one_sup),
            l1_log_singular: ver.l1_log_singular,
            linf_log_complement: IntervalScalar::new(0.0, ver.linf_log_complement),
            restricted_set: ver.restricted_set.clone(),
        })
    }
}

/// `||f_2 - f_1|| <= (sum C_i)/(1 - alpha) * ||L_1 - L_2||` for two Markov
/// operators sharing the iterate bounds of `cert`.
pub fn markov_perturbation_bound(
    cert: &ContractionCertificate,
    op_distance: IntervalScalar,
) -> IntervalScalar {
    let b = cert.amplification() * op_distance;
    IntervalScalar::new(0.0, b.hi())
}

/// L1 stability under map perturbations:
/// `(sum C_i)/(1-alpha) * ||T_1 - T_2||_inf * ||rho_xi||_BV`
/// with `||rho_xi||_BV = 2/xi` for the uniform kernel.
pub fn map_perturbation_l1(
    cert: &ContractionCertificate,
    kernel: &NoiseKernel,
    sup_distance: IntervalScalar,
) -> Result<IntervalScalar, Error> {
    let b = cert.amplification() * sup_distance * kernel.var_rho_xi()?;
    Ok(IntervalScalar::new(0.0, b.hi()))
}

/// L1 stability under a change of the uniform-noise amplitude:
/// `(sum C_i)/(1-alpha) * (4/xi) |xi - xi~|` for `xi/2 < xi~ < 2 xi`.
pub fn noise_perturbation_l1(
    cert: &ContractionCertificate,
    kernel: &NoiseKernel,
    xi_tilde: IntervalScalar,
) -> Result<IntervalScalar, Error> {
    let xi = kernel.xi;
    if !(xi_tilde.lo() > xi.hi() / 2.0 && xi_tilde.hi() < 2.0 * xi.lo()) {
        return Err(Error::Domain(format!(
            "uniform-kernel distance formula needs xi/2 < xi~ < 2 xi, got {xi_tilde}"
        )));
    }
    let dist = (xi - xi_tilde).abs();
    let kd = IntervalScalar::point(4.0).checked_div(&xi)? * dist;
    let b = cert.amplification() * kd;
    Ok(IntervalScalar::new(0.0, b.hi()))
}

/// Coefficient (per |xi^ - xi~|) of the two-sided version: both amplitudes in
/// `[xi, 2^(1/n_bar) xi)`, where the transferred iterate bounds are
/// `(C_i + 1)/2`.
pub fn noise_perturbation_l1_window_coef(
    cert: &ContractionCertificate,
    kernel: &NoiseKernel,
) -> Result<IntervalScalar, Error> {
    let n = IntervalScalar::point(cert.n_bar as f64);
    let coef = (cert.sum_ci + n)
        .checked_div(&(IntervalScalar::ONE - cert.alpha))?
        * IntervalScalar::point(4.0).checked_div(&kernel.xi)?;
    Ok(IntervalScalar::new(0.0, coef.hi()))
}

/// Restricted-set L-infinity stability under a compatible map perturbation of
/// piecewise-C1 size K:
/// `||rho_xi||_inf [ l1_dist + K (2 + M D + M/eta + 2 Var(rho_xi))/(eta - K) ]`.
pub fn restricted_linf_map(
    inputs: &StabilityInputs,
    l1_dist: IntervalScalar,
    k: IntervalScalar,
) -> Result<IntervalScalar, Error> {
    let eta = eta_lower(&inputs.eta_inv)?;
    if k.hi() >= eta.lo() {
        return Err(Error::Domain(format!(
            "perturbation size {k} reaches eta {eta}"
        )));
    }
    let m = IntervalScalar::point(inputs.branch_count as f64);
    let two = IntervalScalar::point(2.0);
    let numer = two
        + m * inputs.distortion
        + m * inputs.eta_inv
        + two * inputs.kernel.var_rho_xi()?;
    let frac = (k * numer).checked_div(&(eta - k))?;
    let b = inputs.kernel.sup_rho_xi()? * (l1_dist + frac);
    Ok(IntervalScalar::new(0.0, b.hi()))
}

/// Restricted-set L-infinity stability under a noise perturbation:
/// `||rho_xi||_inf [ l1_dist + 2 ||L_T 1||_inf(S_xi) ||rho_xi - rho_xi~||_1 ]`.
pub fn restricted_linf_noise(
    inputs: &StabilityInputs,
    l1_dist: IntervalScalar,
    kernel_distance: IntervalScalar,
) -> Result<IntervalScalar, Error> {
    let b = inputs.kernel.sup_rho_xi()?
        * (l1_dist + IntervalScalar::point(2.0) * inputs.transfer_one * kernel_distance);
    Ok(IntervalScalar::new(0.0, b.hi()))
}

/// Closed-form distances between two parameterizations of the built-in
/// two-branch model.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapDistance {
    /// sup distance <= |da| + |db| + 7 |dc|.
    pub sup: IntervalScalar,
    /// piecewise-C1 distance <= 2 |da| + |db| + 57 |dc|.
    pub c1pw: IntervalScalar,
    /// ||log|T_1'| - log|T_2'|||_L1 <= |da|(3 - 2 log |da|) + 0.7 |dc|/min c.
    pub obs_l1: IntervalScalar,
}

pub fn bz_map_distance(
    a: IntervalScalar,
    a2: IntervalScalar,
    b: IntervalScalar,
    b2: IntervalScalar,
    c: IntervalScalar,
    c2: IntervalScalar,
) -> Result<MapDistance, Error> {
    for v in [a, a2] {
        if v.lo() < 0.4 || v.hi() > 0.58 {
            return Err(Error::Domain(format!(
                "observable-distance formula needs a in [0.4, 0.58], got {v}"
            )));
        }
    }
    let c_min = c.min_i(&c2);
    if c_min.lo() <= 0.06 {
        return Err(Error::Domain(format!(
            "observable-distance formula needs min(c, c') > 0.06, got {c_min}"
        )));
    }
    let da = (a - a2).abs();
    let db = (b - b2).abs();
    let dc = (c - c2).abs();
    let seven = IntervalScalar::point(7.0);
    let sup = da + db + seven * dc;
    let c1pw = IntervalScalar::point(2.0) * da + db + IntervalScalar::point(57.0) * dc;
    // t (3 - 2 log t) is increasing for t < sqrt(e); evaluate at the upper end.
    let a_term = if da.hi() == 0.0 {
        IntervalScalar::ZERO
    } else {
        let t = IntervalScalar::point(da.hi());
        t * (IntervalScalar::point(3.0) - IntervalScalar::point(2.0) * t.log()?)
    };
    let c_term = IntervalScalar::from_decimal("0.7")? * dc.checked_div(&c_min)?;
    let obs = a_term + c_term;
    Ok(MapDistance {
        sup: IntervalScalar::new(0.0, sup.hi()),
        c1pw: IntervalScalar::new(0.0, c1pw.hi()),
        obs_l1: IntervalScalar::new(0.0, obs.hi()),
    })
}

/// Continuity moduli for the Lyapunov exponent, assembled from a run's own
/// certificate, restricted-set constants and observable norms:
/// `|lambda - lambda~| <= c_a_log (-|da| log |da|) + c_a |da| + c_b |db| +
/// c_c |dc|` for parameter changes (with piecewise-C1 distance below
/// `k_max`), and `|lambda_xi - lambda_xi~| <= c_xi |xi - xi~|` inside the
/// one-sided window (`c_xi_window` inside the two-sided window
/// `[xi, 2^(1/n_bar) xi)`).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StabilityReport {
    pub c_a_log: IntervalScalar,
    pub c_a: IntervalScalar,
    pub c_b: IntervalScalar,
    pub c_c: IntervalScalar,
    pub c_xi: IntervalScalar,
    pub c_xi_window: IntervalScalar,
    pub k_max: f64,
    pub window_exponent: usize,
    pub notes: Vec<String>,
}

pub fn lyapunov_stability_report(
    inputs: &StabilityInputs,
    k_max: f64,
) -> Result<StabilityReport, Error> {
    let cert = &inputs.cert;
    if !cert.valid_for_continuum {
        return Err(Error::MissingPrerequisite(
            "the certificate must be valid for the continuum operator".into(),
        ));
    }
    let kernel = &inputs.kernel;
    let sup_rho = kernel.sup_rho_xi()?;
    let var_rho_xi = kernel.var_rho_xi()?;
    let eta = eta_lower(&inputs.eta_inv)?;
    if k_max >= eta.lo() {
        return Err(Error::MissingPrerequisite(format!(
            "k_max {k_max} reaches eta {eta}"
        )));
    }
    let m = IntervalScalar::point(inputs.branch_count as f64);
    let two = IntervalScalar::point(2.0);

    // Per unit of sup-distance: L1 movement of the measure.
    let coef_sup = cert.amplification() * var_rho_xi;
    // Per unit of piecewise-C1 distance: the restricted-set multiplier.
    let r_coef = (two + m * inputs.distortion + m * inputs.eta_inv + two * var_rho_xi)
        .checked_div(&(eta - IntervalScalar::point(k_max)))?;

    // |int_A h (f1 - f2)| <= ||h||_L1(A) ||f1 - f2||_inf(A) and the
    // complement term ||h||_inf(A^c) ||f1 - f2||_L1; the observable movement
    // itself contributes ||dh||_L1 ||f2||_inf <= sup_rho * obs distance.
    let h1 = inputs.l1_log_singular;
    let hc = inputs.linf_log_complement;

    let weighted = |s_w: f64, c_w: f64| -> IntervalScalar {
        let s_w = IntervalScalar::point(s_w);
        let c_w = IntervalScalar::point(c_w);
        h1 * sup_rho * (coef_sup * s_w + c_w * r_coef) + hc * coef_sup * s_w
    };

    let c_a_log = two * sup_rho;
    let c_a = IntervalScalar::point(3.0) * sup_rho + weighted(1.0, 2.0);
    let c_b = weighted(1.0, 1.0);
    let c_min = IntervalScalar::from_decimal("0.06")?;
    let c_c = IntervalScalar::from_decimal("0.7")?.checked_div(&c_min)? * sup_rho
        + weighted(7.0, 57.0);

    let noise_coef = cert.amplification() * IntervalScalar::point(4.0).checked_div(&kernel.xi)?;
    let noise_coef2 = noise_perturbation_l1_window_coef(cert, kernel)?;
    let c_xi = h1 * sup_rho * (noise_coef + two * inputs.transfer_one
        * IntervalScalar::point(4.0).checked_div(&kernel.xi)?)
        + hc * noise_coef;
    let c_xi_window = h1
        * sup_rho
        * (noise_coef2
            + two * inputs.transfer_one * IntervalScalar::point(4.0).checked_div(&kernel.xi)?)
        + hc * noise_coef2;

    Ok(StabilityReport {
        c_a_log: upper(c_a_log),
        c_a: upper(c_a),
        c_b: upper(c_b),
        c_c: upper(c_c),
        c_xi: upper(c_xi),
        c_xi_window: upper(c_xi_window),
        k_max,
        window_exponent: cert.n_bar,
        notes: vec![
            "moduli assembled from this run's certificate and verified restricted-set constants"
                .into(),
        ],
    })
}

fn upper(v: IntervalScalar) -> IntervalScalar {
    IntervalScalar::new(0.0, v.hi())
}

/// Certified lower bound on eta = inf |T'| from the upper bound on 1/|T'|,
/// as a point interval (conservative in every downstream denominator).
fn eta_lower(eta_inv: &IntervalScalar) -> Result<IntervalScalar, Error> {
    if !(eta_inv.hi() > 0.0) || !eta_inv.hi().is_finite() {
        return Err(Error::MissingPrerequisite(format!(
            "no usable bound on 1/|T'|: {eta_inv}"
        )));
    }
    Ok(IntervalScalar::point((1.0 / eta_inv.hi()).next_down()))
}
