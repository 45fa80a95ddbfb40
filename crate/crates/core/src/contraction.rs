//! Certified contraction rates of the discretized annealed operator on the
//! zero-average space V.
//!
//! Iterate norms are bounded by evolving the centered family
//! `w_j = e_j/delta - 1` (cell density minus the uniform density). For any
//! pair (a, b), `(e_a - e_b)/(2 delta) = (w_a - w_b)/2`, and the extreme
//! points of the V unit ball are exactly those normalized pair differences,
//! so `||L^n|_V|| <= max_j ||L^n w_j||`. The family is evolved in a float
//! fast path whose per-step deviation from the exact operator is accumulated
//! into the reported bounds; an interval-arithmetic audit re-checks one
//! vector every eight steps and aborts on mismatch.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::interval::{sum, IntervalScalar};
use crate::noise::NoiseKernel;
use crate::ulam::UlamOperator;

pub const AUDIT_PERIOD: usize = 8;

/// Certified bounds C_i >= ||L^i_{delta,xi}|_V|| with C_{n_bar} = alpha < 1.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ContractionCertificate {
    pub delta: IntervalScalar,
    pub xi: IntervalScalar,
    pub n_bar: usize,
    /// Bound at n_bar; strictly below 1.
    pub alpha: IntervalScalar,
    /// C_0 .. C_{n_bar - 1} (C_0 = 1).
    pub ci: Vec<IntervalScalar>,
    pub sum_ci: IntervalScalar,
    /// Whether the bounds also apply to the continuum operator L_xi
    /// (true after a coarse-fine transfer, which covers sigma = identity).
    pub valid_for_continuum: bool,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub operator_hash: Option<String>,
    pub chain: Vec<String>,
}

impl ContractionCertificate {
    fn assemble(
        delta: IntervalScalar,
        xi: IntervalScalar,
        n_bar: usize,
        bounds: &[IntervalScalar],
        valid_for_continuum: bool,
        provenance: Provenance,
    ) -> Result<Self, Error> {
        let alpha = bounds[n_bar];
        if alpha.hi() >= 1.0 {
            return Err(Error::TransferFailed { value: alpha.hi() });
        }
        let ci: Vec<IntervalScalar> = bounds[..n_bar].to_vec();
        let sum_ci = sum(ci.iter().copied());
        Ok(ContractionCertificate {
            delta,
            xi,
            n_bar,
            alpha,
            ci,
            sum_ci,
            valid_for_continuum,
            provenance,
        })
    }

    /// sum C_i / (1 - alpha): the amplification constant of the fixed-point
    /// perturbation lemma.
    pub fn amplification(&self) -> IntervalScalar {
        self.sum_ci * (IntervalScalar::ONE - self.alpha).recip().unwrap()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Certified upper bounds on `||L^i_{delta,xi}|_V||` for i = 0..n (inclusive;
/// index 0 is 1). All bounds are clipped at 1 (the operator is Markov) and
/// post-processed with submultiplicativity.
pub fn iterate_norm_bound(
    op: &UlamOperator,
    kernel: &NoiseKernel,
    n: usize,
) -> Result<Vec<IntervalScalar>, Error> {
    iterate_norm_bound_with_stop(op, kernel, n, 0.0)
}

use crate::noise::LANES;

/// As [`iterate_norm_bound`], stopping early once every generating vector has
/// decayed below `stop_below` (0 disables the early stop; the returned
/// sequence is truncated accordingly).
pub fn iterate_norm_bound_with_stop(
    op: &UlamOperator,
    kernel: &NoiseKernel,
    n: usize,
    stop_below: f64,
) -> Result<Vec<IntervalScalar>, Error> {
    assert!(n >= 1);
    let k = op.grid.k;
    let delta = 1.0 / k as f64;
    let sigma = op.float_step_error(kernel);
    let norm_slack = 1.0 + 4.0 * k as f64 * f64::EPSILON;
    let view = op.float_view();
    let blocks = k.div_ceil(LANES);

    // Evolve the generating family w_j = e_j/delta - 1 in lane blocks (the
    // last block pads by repeating the final vector); record per-step norm
    // bounds including the accumulated float-path deviation.
    let per_block: Vec<Result<Vec<f64>, Error>> = (0..blocks)
        .into_par_iter()
        .map(|block| {
            let j0 = block * LANES;
            let mut v = vec![-1.0f64; k * LANES];
            for l in 0..LANES {
                let j = (j0 + l).min(k - 1);
                v[j * LANES + l] += 1.0 / delta;
            }
            let mut mat = vec![0.0f64; k * LANES];
            let mut out = vec![0.0f64; k * LANES];
            let mut noise_ws = crate::noise::NoiseScratch::default();
            let mut bounds = Vec::with_capacity(n);
            let mut cum_err = [0.0f64; LANES];
            let mut lane_norm = [0.0f64; LANES];
            for step in 0..n {
                lane_norms(&v, k, delta, norm_slack, &mut lane_norm);
                view.matvec_block(&v, &mut mat);
                crate::noise::apply_noise_float_block(
                    kernel,
                    &op.grid,
                    &mat,
                    &mut noise_ws,
                    &mut out,
                );
                for l in 0..LANES {
                    cum_err[l] += sigma * lane_norm[l];
                }
                if step % AUDIT_PERIOD == AUDIT_PERIOD - 1 && block % 13 == step % 13 {
                    let lane = step % LANES;
                    let vl: Vec<f64> = (0..k).map(|t| v[t * LANES + lane]).collect();
                    let ol: Vec<f64> = (0..k).map(|t| out[t * LANES + lane]).collect();
                    audit_step(op, kernel, &vl, &ol, sigma, step)?;
                }
                std::mem::swap(&mut v, &mut out);
                lane_norms(&v, k, delta, norm_slack, &mut lane_norm);
                let mut step_max = 0.0f64;
                for l in 0..LANES {
                    step_max = step_max.max(lane_norm[l] + cum_err[l]);
                }
                bounds.push(step_max);
                if stop_below > 0.0 && step_max < stop_below {
                    break;
                }
            }
            Ok(bounds)
        })
        .collect();

    let mut maxima = vec![0.0f64; n];
    let mut effective_n = n;
    for r in per_block {
        let bounds = r?;
        effective_n = effective_n.min(bounds.len());
        for (i, b) in bounds.iter().enumerate() {
            maxima[i] = maxima[i].max(*b);
        }
    }
    maxima.truncate(effective_n);

    let mut out = Vec::with_capacity(effective_n + 1);
    out.push(1.0);
    for m in maxima {
        out.push(m.min(1.0));
    }
    // Submultiplicative smoothing: C_{i+j} <= C_i C_j.
    for i in 1..out.len() {
        for s in 1..i {
            let prod = (out[s] * out[i - s]).next_up();
            if prod < out[i] {
                out[i] = prod;
            }
        }
    }
    Ok(out.into_iter().map(IntervalScalar::point).collect())
}

fn lane_norms(v: &[f64], k: usize, delta: f64, slack: f64, out: &mut [f64; LANES]) {
    *out = [0.0; LANES];
    for t in 0..k {
        let vb: &[f64; LANES] = v[t * LANES..(t + 1) * LANES].try_into().unwrap();
        for l in 0..LANES {
            out[l] += vb[l].abs();
        }
    }
    for l in 0..LANES {
        out[l] *= delta * slack;
    }
}

fn l1(v: &[f64], delta: f64) -> f64 {
    v.iter().map(|a| a.abs()).sum::<f64>() * delta
}

/// Re-runs one float step in interval arithmetic and checks the float result
/// stays within the enclosure inflated by the per-step budget.
fn audit_step(
    op: &UlamOperator,
    kernel: &NoiseKernel,
    v: &[f64],
    float_result: &[f64],
    sigma: f64,
    step: usize,
) -> Result<(), Error> {
    let vi: Vec<IntervalScalar> = v.iter().map(|&a| IntervalScalar::point(a)).collect();
    let wi = op.apply(kernel, &vi);
    let delta = 1.0 / op.grid.k as f64;
    let mut drift = 0.0;
    for (f, w) in float_result.iter().zip(&wi) {
        let d = if *f < w.lo() {
            w.lo() - *f
        } else if *f > w.hi() {
            *f - w.hi()
        } else {
            0.0
        };
        drift += d * delta;
    }
    let budget = sigma * l1(v, delta) * 1.0001 + 1e-300;
    if drift > budget {
        return Err(Error::AuditFailed {
            step,
            drift,
            budget,
        });
    }
    Ok(())
}

/// Picks n_bar from a bound sequence: among indices with C_i <= target_alpha
/// (falling back to the argmin when none qualify), minimize
/// (sum_{t<i} C_t) / (1 - C_i).
pub fn make_certificate(
    delta: IntervalScalar,
    xi: IntervalScalar,
    bounds: &[IntervalScalar],
    target_alpha: f64,
    provenance: Provenance,
) -> Result<ContractionCertificate, Error> {
    let candidates: Vec<usize> = (1..bounds.len())
        .filter(|&i| bounds[i].hi() < 1.0)
        .collect();
    if candidates.is_empty() {
        return Err(Error::NoContraction);
    }
    let targeted: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|&i| bounds[i].hi() <= target_alpha)
        .collect();
    let pool = if targeted.is_empty() {
        let best = *candidates
            .iter()
            .min_by(|&&a, &&b| bounds[a].hi().total_cmp(&bounds[b].hi()))
            .unwrap();
        vec![best]
    } else {
        targeted
    };
    let cost = |i: usize| -> f64 {
        let s: f64 = bounds[..i].iter().map(|c| c.hi()).sum();
        s / (1.0 - bounds[i].hi())
    };
    let n_bar = pool
        .into_iter()
        .min_by(|&a, &b| cost(a).total_cmp(&cost(b)))
        .unwrap();
    ContractionCertificate::assemble(delta, xi, n_bar, bounds, false, provenance)
}

/// Transfers a certificate to a finer grid (and to the continuum operator):
/// `||L^{n+1}_{delta',xi}|_V|| <= C_n + (delta/xi)(2 sum_{t<n} C_t + 1)`,
/// applied per index. The coarse grid size must be an integer multiple of
/// the fine one.
pub fn coarse_fine_transfer(
    coarse: &ContractionCertificate,
    fine_delta: IntervalScalar,
    kernel: &NoiseKernel,
) -> Result<ContractionCertificate, Error> {
    let ratio = coarse.delta.midpoint() / fine_delta.midpoint();
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 {
        return Err(Error::Config(format!(
            "coarse delta must be an integer multiple of fine delta (ratio {ratio})"
        )));
    }
    let dx = coarse.delta.checked_div(&kernel.xi)?;
    let two = IntervalScalar::point(2.0);

    // Full coarse sequence C_0..C_{n_bar} (alpha is the last element).
    let mut coarse_seq = coarse.ci.clone();
    coarse_seq.push(coarse.alpha);

    let mut fine = Vec::with_capacity(coarse_seq.len() + 1);
    fine.push(IntervalScalar::ONE);
    let mut partial = IntervalScalar::ZERO;
    for (i, c) in coarse_seq.iter().enumerate() {
        // correction_i = (delta/xi)(2 sum_{t<i} C_t + 1)
        let corr = dx * (two * partial + IntervalScalar::ONE);
        let transferred = *c + corr;
        fine.push(if transferred.hi() >= 1.0 {
            IntervalScalar::new(transferred.lo().min(1.0), 1.0)
        } else {
            transferred
        });
        partial = partial + *c;
        let _ = i;
    }
    let n_bar = coarse.n_bar + 1;
    if fine[n_bar].hi() >= 1.0 {
        return Err(Error::TransferFailed {
            value: fine[n_bar].hi(),
        });
    }
    let mut provenance = coarse.provenance.clone();
    provenance.chain.push(format!(
        "coarse-fine: delta {} -> {}",
        coarse.delta.midpoint(),
        fine_delta.midpoint()
    ));
    ContractionCertificate::assemble(fine_delta, coarse.xi, n_bar, &fine, true, provenance)
}

/// Transfers a certificate to a larger uniform-noise amplitude:
/// `C_i -> C_i (xi/xi_hat)^i + (1 - (xi/xi_hat)^i)`. Mixing (some C_i < 1)
/// is preserved.
pub fn noise_monotonicity(
    cert: &ContractionCertificate,
    xi_hat: IntervalScalar,
) -> Result<ContractionCertificate, Error> {
    if xi_hat.lo() < cert.xi.hi() {
        return Err(Error::Domain(format!(
            "noise monotonicity needs xi_hat >= xi, got {xi_hat} < {}",
            cert.xi
        )));
    }
    if xi_hat.lo() == cert.xi.hi() && xi_hat.hi() == cert.xi.hi() {
        return Ok(cert.clone());
    }
    let ratio = cert.xi.checked_div(&xi_hat)?;
    let mut seq = cert.ci.clone();
    seq.push(cert.alpha);
    let transferred: Vec<IntervalScalar> = seq
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let r = ratio.pow_int(i as i32).unwrap();
            let v = *c * r + (IntervalScalar::ONE - r);
            IntervalScalar::new(v.lo().clamp(0.0, 1.0), v.hi().min(1.0))
        })
        .collect();
    let mut provenance = cert.provenance.clone();
    provenance.chain.push(format!(
        "noise monotonicity: xi {} -> {}",
        cert.xi.midpoint(),
        xi_hat.midpoint()
    ));
    ContractionCertificate::assemble(
        cert.delta,
        xi_hat,
        cert.n_bar,
        &transferred,
        cert.valid_for_continuum,
        provenance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_doubling_map, MapDefinition, BranchDefinition, Monotonicity};
    use crate::expr::Expr;
    use crate::ulam::{assemble, UlamGrid};

    fn identity_map() -> crate::dynamics::MapModel {
        MapDefinition {
            id: "identity".into(),
            branches: vec![BranchDefinition {
                lo: IntervalScalar::point(0.0),
                hi: IntervalScalar::point(1.0),
                monotonicity: Monotonicity::Increasing,
                expr: Expr::parse("x").unwrap(),
            }],
            params: Default::default(),
        }
        .build()
        .unwrap()
    }

    #[test]
    fn doubling_map_contracts_quickly() {
        let m = make_doubling_map();
        let g = UlamGrid::new(256).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.25)).unwrap();
        let bounds = iterate_norm_bound(&op, &kernel, 10).unwrap();
        assert!(
            bounds.iter().any(|b| b.hi() < 1.0),
            "no contraction within 10 iterations"
        );
        // Submultiplicativity of the reported sequence.
        for i in 1..bounds.len() {
            for s in 1..i {
                assert!(
                    bounds[i].hi() <= bounds[s].hi() * bounds[i - s].hi() * (1.0 + 1e-12),
                    "C_{i} > C_{s} C_{}",
                    i - s
                );
            }
        }
    }

    #[test]
    fn identity_operator_never_contracts() {
        let m = identity_map();
        let g = UlamGrid::new(64).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::ZERO).unwrap();
        let bounds = iterate_norm_bound(&op, &kernel, 6).unwrap();
        for b in &bounds {
            assert!((b.hi() - 1.0).abs() < 1e-12, "identity bound {b}");
        }
        assert!(matches!(
            make_certificate(
                g.delta(),
                IntervalScalar::ZERO,
                &bounds,
                0.5,
                Provenance::default()
            ),
            Err(Error::NoContraction)
        ));
    }

    #[test]
    fn generating_set_bound_dominates_random_zero_average_vectors() {
        let m = make_doubling_map();
        let g = UlamGrid::new(64).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.2)).unwrap();
        let n = 8;
        let bounds = iterate_norm_bound(&op, &kernel, n).unwrap();
        let mut x = 0.77f64;
        for _ in 0..50 {
            // Random zero-average v with ||v||_1 = 1.
            let mut v: Vec<f64> = (0..64)
                .map(|_| {
                    x = (x * 129.3 + 0.71).rem_euclid(2.0) - 1.0;
                    x
                })
                .collect();
            let mean = v.iter().sum::<f64>() / 64.0;
            for a in v.iter_mut() {
                *a -= mean;
            }
            let norm = v.iter().map(|a| a.abs()).sum::<f64>() / 64.0;
            for a in v.iter_mut() {
                *a /= norm;
            }
            let mut vi: Vec<IntervalScalar> =
                v.iter().map(|&a| IntervalScalar::point(a)).collect();
            for i in 1..=n {
                vi = op.apply(&kernel, &vi);
                let norm_i = g.l1_norm(&vi);
                assert!(
                    norm_i.lo() <= bounds[i].hi() * (1.0 + 1e-9),
                    "step {i}: {} > {}",
                    norm_i.lo(),
                    bounds[i].hi()
                );
            }
        }
    }

    #[test]
    fn certificate_selection_follows_the_cost_rule() {
        let bounds = vec![
            IntervalScalar::point(1.0),
            IntervalScalar::point(0.5),
            IntervalScalar::point(0.1),
        ];
        let cert = make_certificate(
            IntervalScalar::point(1.0 / 256.0),
            IntervalScalar::point(0.1),
            &bounds,
            0.2,
            Provenance::default(),
        )
        .unwrap();
        assert_eq!(cert.n_bar, 2);
        assert!(cert.alpha.contains(0.1));
        assert!(cert.sum_ci.contains(1.5));

        // n_bar = 1 is accepted at the boundary.
        let bounds = vec![IntervalScalar::point(1.0), IntervalScalar::point(0.044)];
        let cert = make_certificate(
            IntervalScalar::point(1.0 / 256.0),
            IntervalScalar::point(0.1),
            &bounds,
            0.5,
            Provenance::default(),
        )
        .unwrap();
        assert_eq!(cert.n_bar, 1);
    }

    #[test]
    fn coarse_fine_arithmetic_matches_the_formula() {
        // alpha = 0.1 at n_bar = 3 with sum C_i = 5, delta/xi = 1e-3:
        // transferred alpha at n_bar + 1 is 0.1 + 11e-3.
        let bounds = vec![
            IntervalScalar::point(1.0),
            IntervalScalar::point(2.0f64.min(1.0)),
            IntervalScalar::point(1.0),
            IntervalScalar::point(0.1),
        ];
        // C_0 + C_1 + C_2 = 3 is not 5; craft explicitly:
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(1e-4),
            xi: IntervalScalar::point(0.1),
            n_bar: 3,
            alpha: IntervalScalar::point(0.1),
            ci: vec![
                IntervalScalar::point(1.0),
                IntervalScalar::point(2.0),
                IntervalScalar::point(2.0),
            ],
            sum_ci: IntervalScalar::point(5.0),
            valid_for_continuum: false,
            provenance: Provenance::default(),
        };
        let _ = bounds;
        let fine = coarse_fine_transfer(
            &cert,
            IntervalScalar::point(1e-4 / 4.0),
            &NoiseKernel::uniform(IntervalScalar::point(0.1)).unwrap(),
        )
        .unwrap();
        assert_eq!(fine.n_bar, 4);
        assert!(fine.alpha.contains(0.1 + 11.0e-3), "alpha {}", fine.alpha);
        assert!(fine.valid_for_continuum);
    }

    #[test]
    fn coarse_fine_transfer_fails_when_correction_is_large() {
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(0.25),
            xi: IntervalScalar::point(0.26),
            n_bar: 1,
            alpha: IntervalScalar::point(0.5),
            ci: vec![IntervalScalar::point(1.0)],
            sum_ci: IntervalScalar::point(1.0),
            valid_for_continuum: false,
            provenance: Provenance::default(),
        };
        let r = coarse_fine_transfer(
            &cert,
            IntervalScalar::point(0.25 / 2.0),
            &NoiseKernel::uniform(IntervalScalar::point(0.26)).unwrap(),
        );
        assert!(matches!(r, Err(Error::TransferFailed { .. })));
    }

    #[test]
    fn noise_monotonicity_formula_and_identity() {
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(1.0 / 256.0),
            xi: IntervalScalar::point(0.1),
            n_bar: 2,
            alpha: IntervalScalar::point(0.5),
            ci: vec![IntervalScalar::point(1.0), IntervalScalar::point(0.9)],
            sum_ci: IntervalScalar::point(1.9),
            valid_for_continuum: true,
            provenance: Provenance::default(),
        };
        // C_2 = 0.5 at xi_hat = 2 xi: 0.5/4 + 3/4 = 0.875.
        let moved = noise_monotonicity(&cert, IntervalScalar::point(0.2)).unwrap();
        assert!(moved.alpha.contains(0.875), "alpha {}", moved.alpha);
        let same = noise_monotonicity(&cert, IntervalScalar::point(0.1)).unwrap();
        assert_eq!(same.alpha, cert.alpha);
    }

    #[test]
    fn certificate_json_round_trip() {
        let cert = ContractionCertificate {
            delta: IntervalScalar::point(1.0 / 2048.0),
            xi: IntervalScalar::from_decimal("0.0086").unwrap(),
            n_bar: 2,
            alpha: IntervalScalar::point(0.25),
            ci: vec![IntervalScalar::point(1.0), IntervalScalar::point(0.8)],
            sum_ci: IntervalScalar::point(1.8),
            valid_for_continuum: true,
            provenance: Provenance {
                operator_hash: Some("abc".into()),
                chain: vec!["direct".into()],
            },
        };
        let s = serde_json::to_string(&cert).unwrap();
        let back: ContractionCertificate = serde_json::from_str(&s).unwrap();
        assert_eq!(back.alpha, cert.alpha);
        assert_eq!(back.ci.len(), cert.ci.len());
        assert_eq!(back.xi, cert.xi);
    }
}
