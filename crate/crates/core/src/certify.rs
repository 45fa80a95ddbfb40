//! Certified stationary densities: the numerical fixed point, its residual
//! amplification, the a-priori error, and the bootstrap (a-posteriori) error
//! that consumes per-interval variation and mass ledgers of the computed
//! density on a coarse partition.
//!
//! The error budget combines three projection-defect estimates of the form
//! `A ||f - f~|| + B`; the telescoped total gives
//! `||f_xi - f~|| <= (numerical + B/(1-alpha)) / (1 - A/(1-alpha))`,
//! with the A-side (dimensionless) as the multiplier of the unknown error
//! and the B-side (density-normed) as the additive term.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contraction::ContractionCertificate;
use crate::dynamics::{MapModel, Monotonicity};
use crate::error::Error;
use crate::interval::IntervalScalar;
use crate::noise::NoiseKernel;
use crate::ulam::{UlamGrid, UlamOperator};

const FIXED_POINT_MAX_ITERS: usize = 200_000;

/// Starting vector for the power iteration.
#[derive(Clone, Copy, Debug)]
pub enum Start {
    Uniform,
    /// Deterministic pseudo-random positive density from the given seed.
    Seeded(u64),
}

/// Power-iterates the discretized operator to a numerical fixed point and
/// certifies the numerical error `||f~ - f_{delta,xi}||_L1` through the
/// residual amplification `sum C_i / (1 - alpha)`.
pub fn fixed_point(
    op: &UlamOperator,
    kernel: &NoiseKernel,
    cert: &ContractionCertificate,
    tol: f64,
    start: Start,
) -> Result<(Vec<f64>, IntervalScalar), Error> {
    let k = op.grid.k;
    let mut v = match start {
        Start::Uniform => vec![1.0f64; k],
        Start::Seeded(seed) => {
            let mut state = seed | 1;
            let mut v: Vec<f64> = (0..k)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
                })
                .collect();
            let m = v.iter().sum::<f64>() / k as f64;
            for a in v.iter_mut() {
                *a /= m;
            }
            v
        }
    };
    let mut ws = crate::ulam::FloatWorkspace::default();
    let mut next = Vec::new();
    let mut converged = false;
    for _ in 0..FIXED_POINT_MAX_ITERS {
        op.apply_float(kernel, &v, &mut ws, &mut next);
        let mass: f64 = next.iter().sum::<f64>() / k as f64;
        let mut residual = 0.0;
        for (a, b) in next.iter_mut().zip(&v) {
            *a /= mass;
            residual += (*a - b).abs();
        }
        residual /= k as f64;
        std::mem::swap(&mut v, &mut next);
        if residual <= 0.25 * tol {
            converged = true;
            break;
        }
    }
    // Certified residual of the float vector under the interval operator.
    let vi: Vec<IntervalScalar> = v.iter().map(|&a| IntervalScalar::point(a)).collect();
    let stepped = op.apply(kernel, &vi);
    let mut residual = IntervalScalar::ZERO;
    for (w, a) in stepped.iter().zip(&v) {
        residual = residual + (*w - IntervalScalar::point(*a)).abs();
    }
    let residual = residual * op.grid.delta();
    if !converged && residual.hi() > tol {
        return Err(Error::NonConvergence {
            residual: residual.hi(),
        });
    }
    // Mass defect: f~ has float mass m close to 1; f~/m is the probability
    // vector the contraction lemma applies to.
    let mass = op.grid.l1_norm(&vi);
    let inv_m = mass.recip()?;
    let defect = (IntervalScalar::ONE - inv_m).abs() * mass;
    let numerical = defect + cert.amplification() * residual * inv_m;
    Ok((v, IntervalScalar::new(0.0, numerical.hi())))
}

/// The a-priori bound
/// `(1 + 2 sum C_i) / (2 (1 - alpha)) * delta * xi^-1 * Var(rho)`.
pub fn a_priori_error(
    cert: &ContractionCertificate,
    grid: &UlamGrid,
    kernel: &NoiseKernel,
) -> Result<IntervalScalar, Error> {
    let two = IntervalScalar::point(2.0);
    let coef = (IntervalScalar::ONE + two * cert.sum_ci)
        .checked_div(&(two * (IntervalScalar::ONE - cert.alpha)))?;
    let v = coef * grid.delta() * kernel.var_rho_xi()?;
    Ok(IntervalScalar::new(0.0, v.hi()))
}

/// Per-branch, per-coarse-cell upper bounds. `var` may be infinite (atom
/// branches, unbounded distortion); `mass` is always finite.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BranchLedger {
    pub var: f64,
    pub mass: f64,
}

/// Variation / mass / sup ledgers of the computed density on the coarse
/// partition Pi.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Ledgers {
    pub pi: UlamGrid,
    /// [branch][coarse cell]
    pub per_branch: Vec<Vec<BranchLedger>>,
    /// Var_I(N_xi L f~) per coarse cell.
    pub var_nlf: Vec<f64>,
    /// ||N_xi L f~||_{L1(I)} upper bound per coarse cell.
    pub mass_nlf: Vec<f64>,
    /// Global Var(N_xi L f~) bound.
    pub var_nlf_global: f64,
    /// sup |T'| per coarse cell (may be infinite).
    pub tprime_sup: Vec<f64>,
}

fn upsum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut n = 0usize;
    for v in values {
        s += v;
        n += 1;
    }
    if s.is_finite() {
        s * (1.0 + 4.0 * (n as f64 + 1.0) * f64::EPSILON)
    } else {
        f64::INFINITY
    }
}

/// Variation of a step function over `[lo, hi]` (interior jumps only),
/// rounded up.
fn step_variation(f: &[f64], grid: &UlamGrid, lo: f64, hi: f64) -> f64 {
    let k = grid.k;
    let first = (lo * k as f64).floor().max(0.0) as usize;
    let last = ((hi * k as f64).ceil() as usize).min(k);
    let mut jumps = Vec::new();
    for t in (first + 1)..last {
        let b = t as f64 / k as f64;
        if b > lo && b < hi {
            jumps.push((f[t] - f[t - 1]).abs());
        }
    }
    upsum(jumps)
}

/// Mass of `|f|` over `[lo, hi]`, rounded up.
fn step_mass(f: &[f64], grid: &UlamGrid, lo: f64, hi: f64) -> f64 {
    let k = grid.k as f64;
    let lo = lo.max(0.0);
    let hi = hi.min(1.0);
    if hi <= lo {
        return 0.0;
    }
    let first = (lo * k).floor() as usize;
    let last = ((hi * k).ceil() as usize).min(grid.k);
    let mut parts = Vec::new();
    for t in first..last {
        let cl = (t as f64 / k).max(lo);
        let ch = ((t + 1) as f64 / k).min(hi);
        if ch > cl {
            parts.push(f[t].abs() * (ch - cl).next_up());
        }
    }
    upsum(parts)
}

/// Builds the variation and mass ledgers of `f~` on the coarse partition.
pub fn variation_ledgers(
    map: &MapModel,
    kernel: &NoiseKernel,
    f: &[f64],
    grid: &UlamGrid,
    pi: &UlamGrid,
) -> Result<Ledgers, Error> {
    if grid.k % pi.k != 0 {
        return Err(Error::Config(format!(
            "coarse partition {} must divide the grid {}",
            pi.k, grid.k
        )));
    }
    let norm_f = grid.l1_norm_float(f);
    let n_branches = map.branches.len();
    let mut per_branch = vec![vec![BranchLedger { var: 0.0, mass: 0.0 }; pi.k]; n_branches];

    for (bi, branch) in map.branches.iter().enumerate() {
        match branch.monotonicity {
            Monotonicity::Constant => {
                let value = branch.eval(branch.domain(), &map.params)?;
                let (p, q) = branch.outer();
                let branch_mass = step_mass(f, grid, p, q);
                for i in 0..pi.k {
                    let cell = pi.cell(i);
                    if value.intersects(&cell) {
                        per_branch[bi][i] = BranchLedger {
                            var: f64::INFINITY,
                            mass: branch_mass,
                        };
                    }
                }
            }
            _ => {
                let cells: Vec<BranchLedger> = (0..pi.k)
                    .into_par_iter()
                    .map(|i| {
                        branch_cell_ledger(map, bi, f, grid, pi, i).unwrap_or(BranchLedger {
                            var: f64::INFINITY,
                            mass: norm_f,
                        })
                    })
                    .collect();
                per_branch[bi] = cells;
            }
        }
    }

    // Aggregate per-cell Var / mass of L f~ (sum over branches).
    let var_lg: Vec<f64> = (0..pi.k)
        .map(|i| upsum(per_branch.iter().map(|b| b[i].var)))
        .collect();
    let mass_lg: Vec<f64> = (0..pi.k)
        .map(|i| upsum(per_branch.iter().map(|b| b[i].mass)))
        .collect();

    let xi_inv = match kernel.sup_rho_xi() {
        Ok(v) => v.hi(),
        Err(_) => f64::INFINITY,
    };
    let half_xi = kernel.support_half_width().hi();
    let delta_pi = 1.0 / pi.k as f64;

    // Sup of L f~ over the edge cells, used when a variation window crosses
    // a boundary where the zero-extension jumps.
    let edge_jump = |i: usize| -> f64 {
        if var_lg[i].is_finite() {
            var_lg[i] + mass_lg[i] / delta_pi
        } else {
            f64::INFINITY
        }
    };

    // Sum of ledger entries over coarse cells intersecting [lo, hi] ∩ [0,1].
    let window_sum = |ledger: &[f64], lo: f64, hi: f64| -> f64 {
        let lo = lo.max(0.0);
        let hi = hi.min(1.0);
        if hi <= lo {
            return 0.0;
        }
        let first = (lo * pi.k as f64).floor() as usize;
        let last = ((hi * pi.k as f64).ceil() as usize).min(pi.k);
        upsum((first..last).map(|j| ledger[j]))
    };

    let mut var_nlf = Vec::with_capacity(pi.k);
    let mut mass_nlf = Vec::with_capacity(pi.k);
    for i in 0..pi.k {
        let a = i as f64 * delta_pi;
        let b = (i + 1) as f64 * delta_pi;
        // Main piece (Lemma-6 style minimum).
        let mass_side = xi_inv
            * (window_sum(&mass_lg, a - half_xi, b - half_xi)
                + window_sum(&mass_lg, a + half_xi, b + half_xi));
        let mut var_window = window_sum(&var_lg, a - half_xi, b + half_xi);
        if a - half_xi < 0.0 {
            var_window += edge_jump(0);
        }
        if b + half_xi > 1.0 {
            var_window += edge_jump(pi.k - 1);
        }
        let var_side = xi_inv * (b - a) * var_window;
        let mut v = mass_side.min(var_side);
        let mut m = window_sum(&mass_lg, a - half_xi, b + half_xi);
        // Reflected pieces [-b,-a] and [2-b, 2-a] (mass alternative only).
        if a < half_xi {
            let (ra, rb) = (-b, -a);
            v += xi_inv
                * (window_sum(&mass_lg, ra - half_xi, rb - half_xi)
                    + window_sum(&mass_lg, ra + half_xi, rb + half_xi));
            m += window_sum(&mass_lg, ra - half_xi, rb + half_xi);
        }
        if b > 1.0 - half_xi {
            let (ra, rb) = (2.0 - b, 2.0 - a);
            v += xi_inv
                * (window_sum(&mass_lg, ra - half_xi, rb - half_xi)
                    + window_sum(&mass_lg, ra + half_xi, rb + half_xi));
            m += window_sum(&mass_lg, ra - half_xi, rb + half_xi);
        }
        var_nlf.push(v);
        mass_nlf.push(m * (1.0 + 8.0 * f64::EPSILON));
    }

    let var_nlf_global = upsum(var_nlf.iter().copied()).min(2.0 * xi_inv * norm_f);

    let tprime_sup: Vec<f64> = (0..pi.k)
        .into_par_iter()
        .map(|i| {
            map.derivative_bounds(pi.cell(i), 4)
                .tprime_abs_sup
                .hi()
        })
        .collect();

    Ok(Ledgers {
        pi: *pi,
        per_branch,
        var_nlf,
        mass_nlf,
        var_nlf_global,
        tprime_sup,
    })
}

fn branch_cell_ledger(
    map: &MapModel,
    bi: usize,
    f: &[f64],
    grid: &UlamGrid,
    pi: &UlamGrid,
    i: usize,
) -> Result<BranchLedger, Error> {
    let branch = &map.branches[bi];
    let increasing = matches!(branch.monotonicity, Monotonicity::Increasing);
    let cell = pi.cell(i);
    // Quick reject when the cell misses the branch image entirely.
    let lo_val = branch.eval(branch.lo, &map.params)?;
    let hi_val = branch.eval(branch.hi, &map.params)?;
    let image = lo_val.hull(&hi_val);
    if cell.lo() > image.hi() || cell.hi() < image.lo() {
        return Ok(BranchLedger { var: 0.0, mass: 0.0 });
    }
    let (y_left, y_right) = if increasing {
        (cell.lo(), cell.hi())
    } else {
        (cell.hi(), cell.lo())
    };
    let left = map.preimage_bracket(bi, y_left, 0.0)?;
    let right = map.preimage_bracket(bi, y_right, 0.0)?;
    let (jl, jh) = (left.lo.min(right.lo), right.hi.max(left.hi));
    if jh <= jl {
        return Ok(BranchLedger { var: 0.0, mass: 0.0 });
    }
    let mass = step_mass(f, grid, jl, jh);
    let var_f = step_variation(f, grid, jl, jh);
    let db = map.derivative_bounds(IntervalScalar::new(jl, jh), 3);
    let inv_sup = if db.tprime_abs_inf.lo() > 0.0 {
        (1.0 / db.tprime_abs_inf.lo()).next_up()
    } else {
        f64::INFINITY
    };
    let dist_sup = db.distortion_sup.hi();

    // Boundary terms: branch-domain endpoints whose image touches the cell.
    let mut boundary = 0.0f64;
    for endpoint in [branch.lo, branch.hi] {
        let ty = branch.eval(endpoint, &map.params)?;
        if !ty.intersects(&cell) {
            continue;
        }
        let idx_lo = grid.locate(endpoint.lo());
        let idx_hi = grid.locate(endpoint.hi());
        let mut fv = 0.0f64;
        for t in idx_lo.saturating_sub(1)..=(idx_hi + 1).min(grid.k - 1) {
            fv = fv.max(f[t].abs());
        }
        match branch.eval_d1(endpoint, &map.params) {
            // The derivative expression is singular exactly at the endpoint:
            // the one-sided limit of |T'| is infinite and g(y)/T'(y) -> 0.
            Err(_) => {}
            Ok(d) => {
                let d = d.abs();
                if d.lo() <= 0.0 {
                    boundary = f64::INFINITY;
                } else {
                    boundary += fv / d.lo();
                }
            }
        }
    }

    let var = if var_f.is_finite() && inv_sup.is_finite() && dist_sup.is_finite() {
        upsum([var_f * inv_sup, mass * dist_sup, boundary])
    } else {
        f64::INFINITY
    };
    Ok(BranchLedger { var, mass })
}

/// The bootstrap constants and the final certified L1 error.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub a1: IntervalScalar,
    pub b1: IntervalScalar,
    pub a2: IntervalScalar,
    pub b2: IntervalScalar,
    pub a3: IntervalScalar,
    pub b3: IntervalScalar,
    pub a_total: IntervalScalar,
    pub b_total: IntervalScalar,
    /// Additive term B/(1-alpha) of the closed inequality.
    pub c_additive: IntervalScalar,
    /// Multiplier A/(1-alpha) of the unknown error; must stay below 1.
    pub d_multiplier: IntervalScalar,
    pub numerical_error: IntervalScalar,
    pub a_priori: IntervalScalar,
    /// True when D >= 1 forced the fallback to the a-priori bound.
    pub downgraded: bool,
    pub final_l1: IntervalScalar,
}

/// Assembles the bootstrap error from the ledgers; falls back to the
/// a-priori bound when the multiplier reaches 1.
pub fn bootstrap_error(
    kernel: &NoiseKernel,
    cert: &ContractionCertificate,
    numerical_error: IntervalScalar,
    ledgers: &Ledgers,
    grid: &UlamGrid,
) -> Result<ErrorBudget, Error> {
    let delta = grid.delta();
    let half = IntervalScalar::point(0.5);
    let quarter = IntervalScalar::point(0.25);
    let eighth = IntervalScalar::point(0.125);
    let var_rho_xi = kernel.var_rho_xi()?;
    let a_side = half * delta * var_rho_xi;

    let b1 = half * delta * IntervalScalar::point(ledgers.var_nlf_global);

    let mut b2_sum = IntervalScalar::ZERO;
    let d4 = quarter * delta;
    for cells in &ledgers.per_branch {
        for (i, l) in cells.iter().enumerate() {
            let var_term = if l.var.is_finite() {
                (d4 * IntervalScalar::point(l.var)).hi()
            } else {
                f64::INFINITY
            };
            let m = var_term.min(l.mass);
            b2_sum = b2_sum + IntervalScalar::new(0.0, m);
            let _ = i;
        }
    }
    let b2 = half * delta * var_rho_xi * b2_sum;

    let d8 = eighth * delta.square() * var_rho_xi;
    let half_delta = (half * delta).hi();
    let mut b3_sum = IntervalScalar::ZERO;
    for i in 0..ledgers.pi.k {
        let w = if ledgers.tprime_sup[i].is_finite() {
            (d8 * IntervalScalar::point(ledgers.tprime_sup[i]))
                .hi()
                .min(half_delta)
        } else {
            half_delta
        };
        b3_sum = b3_sum + IntervalScalar::new(0.0, w * ledgers.var_nlf[i]);
    }
    let b3 = b3_sum
        + quarter
            * delta.square()
            * var_rho_xi
            * IntervalScalar::point(ledgers.var_nlf_global);

    let a_total = a_side + (a_side + a_side) * cert.sum_ci;
    let b_total = b1 + (b2 + b3) * cert.sum_ci;

    let one_minus_alpha = IntervalScalar::ONE - cert.alpha;
    let d_multiplier = a_total.checked_div(&one_minus_alpha)?;
    let c_additive = b_total.checked_div(&one_minus_alpha)?;
    let a_priori = a_priori_error(cert, grid, kernel)?;

    let fallback = (numerical_error + a_priori).hi();
    let (downgraded, final_hi) = if d_multiplier.hi() < 1.0 {
        let f = (numerical_error + c_additive)
            .checked_div(&(IntervalScalar::ONE - d_multiplier))?;
        (false, f.hi().min(fallback))
    } else {
        (true, fallback)
    };

    Ok(ErrorBudget {
        a1: a_side,
        b1,
        a2: a_side,
        b2,
        a3: a_side,
        b3,
        a_total,
        b_total,
        c_additive,
        d_multiplier,
        numerical_error,
        a_priori,
        downgraded,
        final_l1: IntervalScalar::new(0.0, final_hi),
    })
}

/// Per-coarse-cell L-infinity bounds on the true stationary density:
/// `Var_I(N L f~) + ||N L f~||_{L1(I)}/|I| + ||f~ - f_xi|| * sup rho_xi`,
/// clipped at the global bound `sup rho_xi`.
pub fn local_linf_bounds(
    ledgers: &Ledgers,
    l1_error: IntervalScalar,
    kernel: &NoiseKernel,
) -> Result<Vec<f64>, Error> {
    let sup = kernel.sup_rho_xi()?.hi();
    let inv_len = ledgers.pi.k as f64;
    Ok((0..ledgers.pi.k)
        .map(|i| {
            let local = upsum([
                ledgers.var_nlf[i],
                ledgers.mass_nlf[i] * inv_len,
                l1_error.hi() * sup,
            ]);
            local.min(sup)
        })
        .collect())
}

/// A certified stationary density: the float vector, its mass enclosure, the
/// final L1 error, and the ledgers backing it.
#[derive(Clone, Debug)]
pub struct DensityEnclosure {
    pub grid: UlamGrid,
    pub values: Vec<f64>,
    pub mass: IntervalScalar,
    pub l1_error: IntervalScalar,
    pub ledgers: Ledgers,
    pub linf: Vec<f64>,
}

impl DensityEnclosure {
    /// Mass of `f~` over `[lo, hi]` (upper bound).
    pub fn mass_over(&self, lo: f64, hi: f64) -> f64 {
        step_mass(&self.values, &self.grid, lo, hi)
    }
}

/// Runs fixed point, ledgers and bootstrap in sequence.
pub fn certify_density(
    map: &MapModel,
    op: &UlamOperator,
    kernel: &NoiseKernel,
    cert: &ContractionCertificate,
    pi: &UlamGrid,
    tol: f64,
    start: Start,
) -> Result<(DensityEnclosure, ErrorBudget), Error> {
    let (f, numerical) = fixed_point(op, kernel, cert, tol, start)?;
    let ledgers = variation_ledgers(map, kernel, &f, &op.grid, pi)?;
    let budget = bootstrap_error(kernel, cert, numerical, &ledgers, &op.grid)?;
    let linf = local_linf_bounds(&ledgers, budget.final_l1, kernel)?;
    let fi: Vec<IntervalScalar> = f.iter().map(|&a| IntervalScalar::point(a)).collect();
    let mass = op.grid.l1_norm(&fi);
    Ok((
        DensityEnclosure {
            grid: op.grid,
            values: f,
            mass,
            l1_error: budget.final_l1,
            ledgers,
            linf,
        },
        budget,
    ))
}

/// Serializable certification report.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CertificationReport {
    pub map_id: String,
    pub xi: IntervalScalar,
    pub grid_k: usize,
    pub pi_k: usize,
    pub budget: ErrorBudget,
}

impl CertificationReport {
    pub fn ledgers_csv(ledgers: &Ledgers, linf: &[f64]) -> String {
        let mut out = String::from("cell,var_nlf,mass_nlf,linf\n");
        for i in 0..ledgers.pi.k {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i, ledgers.var_nlf[i], ledgers.mass_nlf[i], linf[i]
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contraction::{iterate_norm_bound, make_certificate, Provenance};
    use crate::dynamics::{make_doubling_map, make_tent_map, make_toy_map};
    use crate::ulam::assemble;

    fn quick_cert(
        op: &UlamOperator,
        kernel: &NoiseKernel,
        n: usize,
    ) -> ContractionCertificate {
        let bounds = iterate_norm_bound(op, kernel, n).unwrap();
        make_certificate(
            op.grid.delta(),
            kernel.xi,
            &bounds,
            0.5,
            Provenance::default(),
        )
        .unwrap()
    }

    #[test]
    fn doubling_fixed_point_is_uniform() {
        let m = make_doubling_map();
        let g = UlamGrid::new(256).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.25)).unwrap();
        let cert = quick_cert(&op, &kernel, 12);
        let (f, numerical) = fixed_point(&op, &kernel, &cert, 1e-10, Start::Uniform).unwrap();
        for a in &f {
            assert!((a - 1.0).abs() < 1e-9, "density {a}");
        }
        assert!(numerical.hi() < 1e-7, "numerical error {numerical}");
    }

    #[test]
    fn tent_fixed_point_is_uniform_from_a_random_start() {
        let m = make_tent_map();
        let g = UlamGrid::new(128).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.1)).unwrap();
        let cert = quick_cert(&op, &kernel, 20);
        let (f, _) = fixed_point(&op, &kernel, &cert, 1e-10, Start::Seeded(7)).unwrap();
        for a in &f {
            assert!((a - 1.0).abs() < 1e-7, "density {a}");
        }
    }

    #[test]
    fn a_priori_formula_arithmetic() {
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(1e-3),
            xi: IntervalScalar::point(0.1),
            n_bar: 2,
            alpha: IntervalScalar::point(0.5),
            ci: vec![IntervalScalar::point(1.0), IntervalScalar::point(1.0)],
            sum_ci: IntervalScalar::point(2.0),
            valid_for_continuum: false,
            provenance: Provenance::default(),
        };
        let g = UlamGrid::new(1000).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.1)).unwrap();
        let e = a_priori_error(&cert, &g, &kernel).unwrap();
        assert!((e.hi() - 0.1).abs() < 1e-9, "a-priori {e}");
        // Linear in delta.
        let g2 = UlamGrid::new(2000).unwrap();
        let e2 = a_priori_error(&cert, &g2, &kernel).unwrap();
        assert!((e2.hi() - 0.05).abs() < 1e-9);
    }

    #[test]
    fn doubling_budget_collapses_to_numerical_error() {
        let m = make_doubling_map();
        let g = UlamGrid::new(1 << 9).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.25)).unwrap();
        let cert = quick_cert(&op, &kernel, 12);
        let pi = UlamGrid::new(1 << 5).unwrap();
        let (density, budget) =
            certify_density(&m, &op, &kernel, &cert, &pi, 1e-11, Start::Uniform).unwrap();
        // Interior variation ledgers vanish (uniform image density); only the
        // branch-edge boundary terms g(y)/2 survive, so B stays small.
        let interior_var: f64 = density.ledgers.var_nlf[8..24].iter().sum();
        assert!(interior_var < 1e-6, "interior Var ledger {interior_var}");
        assert!(budget.b_total.hi() < 0.05, "B = {}", budget.b_total);
        assert!(!budget.downgraded);
        assert!(budget.final_l1.hi() < 0.05, "final {}", budget.final_l1);
        assert!(budget.final_l1.hi() <= budget.a_priori.hi() + budget.numerical_error.hi());
        // L-infinity ledger: approximately 1 + small.
        for b in &density.linf {
            assert!(*b >= 1.0 - 1e-6 && *b <= 4.0 + 1.0, "linf {b}");
        }
    }

    #[test]
    fn synthetic_zero_variation_ledgers_collapse_b_terms() {
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(1.0 / 512.0),
            xi: IntervalScalar::point(0.25),
            n_bar: 2,
            alpha: IntervalScalar::point(0.2),
            ci: vec![IntervalScalar::point(1.0), IntervalScalar::point(0.5)],
            sum_ci: IntervalScalar::point(1.5),
            valid_for_continuum: false,
            provenance: Provenance::default(),
        };
        let g = UlamGrid::new(512).unwrap();
        let pi = UlamGrid::new(32).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.25)).unwrap();
        let ledgers = Ledgers {
            pi,
            per_branch: vec![vec![BranchLedger { var: 0.0, mass: 0.5 }; 32]; 2],
            var_nlf: vec![0.0; 32],
            mass_nlf: vec![1.0 / 32.0; 32],
            var_nlf_global: 0.0,
            tprime_sup: vec![2.0; 32],
        };
        let nu = IntervalScalar::new(0.0, 1e-9);
        let budget = bootstrap_error(&kernel, &cert, nu, &ledgers, &g).unwrap();
        assert!(budget.b_total.hi() < 1e-12, "B = {}", budget.b_total);
        let expected = nu.hi() / (1.0 - budget.d_multiplier.hi());
        assert!(
            (budget.final_l1.hi() - expected).abs() <= 1e-12 + expected * 1e-9,
            "final {} vs {expected}",
            budget.final_l1
        );
    }

    #[test]
    fn toy_map_density_concentrates_left_of_the_noise_reach() {
        let m = make_toy_map(IntervalScalar::ZERO).unwrap();
        let g = UlamGrid::new(1 << 9).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.1)).unwrap();
        let cert = quick_cert(&op, &kernel, 30);
        let (f, _) = fixed_point(&op, &kernel, &cert, 1e-10, Start::Uniform).unwrap();
        // Monte-Carlo forward runs (oracle) put essentially all mass below
        // T(max) + xi/2 = 0.5 + 0.05; assert the certified fixed point does.
        let fi: Vec<IntervalScalar> = f.iter().map(|&a| IntervalScalar::point(a)).collect();
        let total = g.l1_norm(&fi).midpoint();
        let inside = step_mass(&f, &g, 0.0, 0.65);
        assert!(inside >= 0.99 * total, "mass inside = {inside} of {total}");
    }

    #[test]
    fn bootstrap_refinement_monotone_under_coarse_partition_refinement() {
        // min-term comparison on synthetic consistent ledgers: refining Pi
        // (halving cells, splitting var and mass additively) never increases
        // the B2-style sum.
        let mut x = 0.9f64;
        for _ in 0..100 {
            let mut coarse_sum = 0.0;
            let mut fine_sum = 0.0;
            let delta = 1e-4;
            for _ in 0..32 {
                x = (x * 91.7 + 0.13).rem_euclid(1.0);
                let v1 = 10.0 * x;
                x = (x * 91.7 + 0.13).rem_euclid(1.0);
                let v2 = 10.0 * x;
                x = (x * 91.7 + 0.13).rem_euclid(1.0);
                let m1 = x;
                x = (x * 91.7 + 0.13).rem_euclid(1.0);
                let m2 = x;
                coarse_sum += (delta / 4.0 * (v1 + v2)).min(m1 + m2);
                fine_sum += (delta / 4.0 * v1).min(m1) + (delta / 4.0 * v2).min(m2);
            }
            assert!(fine_sum <= coarse_sum + 1e-15);
        }
    }

    #[test]
    fn downgrade_path_returns_a_priori() {
        // Certificate with huge sum C_i relative to delta/xi forces D >= 1.
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(1.0 / 64.0),
            xi: IntervalScalar::point(0.05),
            n_bar: 1,
            alpha: IntervalScalar::point(0.9),
            ci: vec![IntervalScalar::point(1.0)],
            sum_ci: IntervalScalar::point(40.0),
            valid_for_continuum: false,
            provenance: Provenance::default(),
        };
        let m = make_doubling_map();
        let g = UlamGrid::new(64).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.05)).unwrap();
        let f = vec![1.0; 64];
        let pi = UlamGrid::new(16).unwrap();
        let ledgers = variation_ledgers(&m, &kernel, &f, &g, &pi).unwrap();
        let budget = bootstrap_error(
            &kernel,
            &cert,
            IntervalScalar::new(0.0, 1e-12),
            &ledgers,
            &g,
        )
        .unwrap();
        assert!(budget.downgraded);
        assert!(budget.final_l1.hi() <= budget.a_priori.hi() + 1e-9);
    }
}
