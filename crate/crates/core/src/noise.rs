//! The reflecting-boundary convolution operator and its grid discretization.
//!
//! The noise step convolves a density with the rescaled kernel rho_xi and
//! folds the result back onto [0,1] through pi(x) = min_i |x - 2i|. For the
//! uniform kernel the projected step `pi_delta N_xi` is applied matrix-free:
//! the double integral of a piecewise-constant density against a moving
//! window reduces to second-order prefix sums evaluated at exact window
//! offsets, so the discrete step is the exact projection of the exact
//! operator, up to outward rounding.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::interval::IntervalScalar;
use crate::ulam::UlamGrid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Uniform,
}

/// A bounded-variation noise kernel `rho_xi(x) = xi^-1 rho(x/xi)` with
/// `rho` supported in [-1/2, 1/2] and unit mass.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct NoiseKernel {
    pub kind: KernelKind,
    pub xi: IntervalScalar,
}

impl NoiseKernel {
    /// Uniform kernel of span `xi` (support half-width xi/2). `xi = 0` is
    /// accepted and makes the operator the identity.
    pub fn uniform(xi: IntervalScalar) -> Result<Self, Error> {
        if xi.lo() < 0.0 || xi.hi() > 1.0 {
            return Err(Error::Domain(format!(
                "uniform kernel needs 0 <= xi <= 1, got {xi}"
            )));
        }
        Ok(NoiseKernel {
            kind: KernelKind::Uniform,
            xi,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.xi.hi() == 0.0
    }

    /// Var(rho) of the unit kernel.
    pub fn var_rho(&self) -> IntervalScalar {
        IntervalScalar::point(2.0)
    }

    /// Var(rho_xi) = xi^-1 Var(rho).
    pub fn var_rho_xi(&self) -> Result<IntervalScalar, Error> {
        self.var_rho().checked_div(&self.xi)
    }

    /// sup-norm of rho_xi.
    pub fn sup_rho_xi(&self) -> Result<IntervalScalar, Error> {
        IntervalScalar::ONE.checked_div(&self.xi)
    }

    pub fn support_half_width(&self) -> IntervalScalar {
        self.xi * IntervalScalar::point(0.5)
    }
}

/// Certified kernel and projection-composed operator norms.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KernelNorms {
    /// Var(rho_xi)
    pub var_rho_xi: IntervalScalar,
    /// sup rho_xi
    pub sup_rho_xi: IntervalScalar,
    /// ||N_xi||_{L1 -> Var} <= xi^-1 Var(rho)
    pub l1_to_var: IntervalScalar,
    /// ||N_xi||_{W -> L1} <= xi^-1 Var(rho)
    pub w_to_l1: IntervalScalar,
    /// ||N_xi (1 - pi_delta)||_{L1 -> L1} <= delta xi^-1 Var(rho) / 2
    pub noise_after_proj_defect: IntervalScalar,
    /// ||(1 - pi_delta) N_xi||_{L1 -> L1} <= delta xi^-1 Var(rho) / 2
    pub proj_defect_after_noise: IntervalScalar,
}

/// Norm ledger used by every error estimate downstream.
pub fn kernel_norms(kernel: &NoiseKernel, delta: IntervalScalar) -> Result<KernelNorms, Error> {
    let var_rho_xi = kernel.var_rho_xi()?;
    let sup_rho_xi = kernel.sup_rho_xi()?;
    let composed = IntervalScalar::point(0.5) * delta * var_rho_xi;
    Ok(KernelNorms {
        var_rho_xi,
        sup_rho_xi,
        l1_to_var: var_rho_xi,
        w_to_l1: var_rho_xi,
        noise_after_proj_defect: composed,
        proj_defect_after_noise: composed,
    })
}

/// The boundary-reflection map pi(x) = min over integers i of |x - 2i|.
pub struct FoldingMap;

impl FoldingMap {
    pub fn fold_point(x: f64) -> f64 {
        let r = (x.rem_euclid(2.0) - 1.0).abs();
        1.0 - r
    }

    /// Interval image of the folding map.
    pub fn fold(x: IntervalScalar) -> IntervalScalar {
        if x.width() >= 2.0 {
            return IntervalScalar::new(0.0, 1.0);
        }
        let a = Self::fold_point(x.lo());
        let b = Self::fold_point(x.hi());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        // Extrema of pi occur at even (min 0) and odd (max 1) integers.
        let first_int = x.lo().ceil();
        let mut k = first_int;
        while k <= x.hi() {
            if (k as i64) % 2 == 0 {
                lo = 0.0;
            } else {
                hi = 1.0;
            }
            k += 1.0;
        }
        IntervalScalar::new((lo - 1e-15).max(0.0), (hi + 1e-15).min(1.0))
    }
}

/// Second-order prefix sums of a grid density: F = cumulative integral,
/// G = cumulative integral of F. Supports exact evaluation of window
/// integrals of the convolved density.
struct Prefix {
    delta: IntervalScalar,
    k: usize,
    values: Vec<IntervalScalar>,
    f: Vec<IntervalScalar>,
    g: Vec<IntervalScalar>,
}

impl Prefix {
    fn build(grid: &UlamGrid, v: &[IntervalScalar]) -> Prefix {
        let k = grid.k;
        let delta = grid.delta();
        let half = IntervalScalar::point(0.5);
        let mut f = Vec::with_capacity(k + 1);
        let mut g = Vec::with_capacity(k + 1);
        f.push(IntervalScalar::ZERO);
        g.push(IntervalScalar::ZERO);
        for j in 0..k {
            let fj = f[j];
            f.push(fj + v[j] * delta);
            g.push(g[j] + fj * delta + v[j] * delta.square() * half);
        }
        Prefix {
            delta,
            k,
            values: v.to_vec(),
            f,
            g,
        }
    }

    /// G at a point `u` anywhere on the real line.
    fn g_at_point(&self, u: f64) -> IntervalScalar {
        if u <= 0.0 {
            return IntervalScalar::ZERO;
        }
        if u >= 1.0 {
            let over = IntervalScalar::point(u) - IntervalScalar::ONE;
            return self.g[self.k] + self.f[self.k] * over;
        }
        let j = ((u * self.k as f64) as usize).min(self.k - 1);
        let r = IntervalScalar::point(u) - self.delta * IntervalScalar::point(j as f64);
        let r = r
            .intersection(&IntervalScalar::new(0.0, self.delta.hi()))
            .unwrap_or(IntervalScalar::ZERO);
        self.g[j] + self.f[j] * r + self.values[j] * r.square() * IntervalScalar::point(0.5)
    }

    /// G over an interval argument (hull of the per-cell closed forms).
    fn g_at(&self, u: IntervalScalar) -> IntervalScalar {
        if u.width() == 0.0 {
            return self.g_at_point(u.lo());
        }
        // Evaluate on the overlap with each piece of the piecewise-quadratic G.
        let mut out: Option<IntervalScalar> = None;
        let mut push = |v: IntervalScalar| {
            out = Some(match out {
                None => v,
                Some(acc) => acc.hull(&v),
            })
        };
        if u.lo() < 0.0 {
            push(IntervalScalar::ZERO);
        }
        if u.hi() > 1.0 {
            let over = IntervalScalar::new(1.0f64.max(u.lo()), u.hi()) - IntervalScalar::ONE;
            push(self.g[self.k] + self.f[self.k] * over);
        }
        let inside = u.intersection(&IntervalScalar::new(0.0, 1.0));
        if let Some(inside) = inside {
            let j_lo = ((inside.lo() * self.k as f64) as usize).min(self.k - 1);
            let j_hi = ((inside.hi() * self.k as f64) as usize).min(self.k - 1);
            for j in j_lo..=j_hi {
                let cell = IntervalScalar::new(
                    j as f64 / self.k as f64,
                    (j + 1) as f64 / self.k as f64,
                );
                if let Some(piece) = inside.intersection(&cell) {
                    let r = piece - IntervalScalar::point(cell.lo());
                    let r = r
                        .intersection(&IntervalScalar::new(0.0, self.delta.hi()))
                        .unwrap_or(IntervalScalar::ZERO);
                    push(
                        self.g[j]
                            + self.f[j] * r
                            + self.values[j] * r.square() * IntervalScalar::point(0.5),
                    );
                }
            }
        }
        out.unwrap_or(IntervalScalar::ZERO)
    }

    /// Mass of rho_xi * f over the real interval [a, b]:
    /// ( G(b+h) - G(a+h) - G(b-h) + G(a-h) ) / xi  with  h = xi/2.
    fn window_mass(&self, a: IntervalScalar, b: IntervalScalar, xi: IntervalScalar) -> IntervalScalar {
        let h = xi * IntervalScalar::point(0.5);
        let m = self.g_at(b + h) - self.g_at(a + h) - self.g_at(b - h) + self.g_at(a - h);
        m / xi
    }
}

/// Applies the projected noise step `pi_delta N_xi` to a grid density of
/// interval values. The reflection is applied unconditionally: output cell
/// `I` collects the convolved mass over `I`, `-I` and `2 - I`.
pub fn apply_noise_discrete(
    kernel: &NoiseKernel,
    grid: &UlamGrid,
    v: &[IntervalScalar],
) -> Vec<IntervalScalar> {
    assert_eq!(v.len(), grid.k);
    if kernel.is_identity() {
        return v.to_vec();
    }
    let xi = kernel.xi;
    let prefix = Prefix::build(grid, v);
    let mut out = Vec::with_capacity(grid.k);
    for i in 0..grid.k {
        let a = grid.boundary(i);
        let b = grid.boundary(i + 1);
        let mut mass = prefix.window_mass(a, b, xi);
        // Folded pieces: [-b, -a] and [2-b, 2-a]; skip when the noise cannot
        // reach across the corresponding boundary.
        if a.lo() < xi.hi() {
            mass = mass + prefix.window_mass(-b, -a, xi);
        }
        if b.hi() > 1.0 - xi.hi() {
            let two = IntervalScalar::point(2.0);
            mass = mass + prefix.window_mass(two - b, two - a, xi);
        }
        out.push(mass / grid.delta());
    }
    out
}

/// Reusable buffers for the float noise path.
#[derive(Default)]
pub struct NoiseScratch {
    f: Vec<f64>,
    g: Vec<f64>,
}

/// Float fast path of [`apply_noise_discrete`], used in the iterate-norm
/// kernels. [`noise_float_error_bound`] bounds its L1 deviation from the
/// exact step.
pub fn apply_noise_float(
    kernel: &NoiseKernel,
    grid: &UlamGrid,
    v: &[f64],
    ws: &mut NoiseScratch,
    out: &mut Vec<f64>,
) {
    let k = grid.k;
    assert_eq!(v.len(), k);
    out.clear();
    if kernel.is_identity() {
        out.extend_from_slice(v);
        return;
    }
    let xi = kernel.xi.midpoint();
    let delta = 1.0 / k as f64;
    ws.f.clear();
    ws.f.resize(k + 1, 0.0);
    ws.g.clear();
    ws.g.resize(k + 1, 0.0);
    let (f, g) = (&mut ws.f, &mut ws.g);
    for j in 0..k {
        f[j + 1] = f[j] + v[j] * delta;
        g[j + 1] = g[j] + f[j] * delta + 0.5 * v[j] * delta * delta;
    }
    let g_at = |u: f64| -> f64 {
        if u <= 0.0 {
            0.0
        } else if u >= 1.0 {
            g[k] + f[k] * (u - 1.0)
        } else {
            let j = ((u * k as f64) as usize).min(k - 1);
            let r = u - j as f64 * delta;
            g[j] + f[j] * r + 0.5 * v[j] * r * r
        }
    };
    let h = 0.5 * xi;
    let window = |a: f64, b: f64| (g_at(b + h) - g_at(a + h) - g_at(b - h) + g_at(a - h)) / xi;
    for i in 0..k {
        let a = i as f64 * delta;
        let b = (i + 1) as f64 * delta;
        let mut m = window(a, b);
        if a < xi {
            m += window(-b, -a);
        }
        if b > 1.0 - xi {
            m += window(2.0 - b, 2.0 - a);
        }
        out.push(m / delta);
    }
}

/// Blocked float noise step: `lanes` interleaved densities evolve together
/// (`v[j * lanes + l]` is cell j of lane l). The window cell indices are
/// shared across lanes, so index arithmetic amortizes.
pub const LANES: usize = 8;

pub fn apply_noise_float_block(
    kernel: &NoiseKernel,
    grid: &UlamGrid,
    v: &[f64],
    ws: &mut NoiseScratch,
    out: &mut [f64],
) {
    let k = grid.k;
    assert_eq!(v.len(), k * LANES);
    assert_eq!(out.len(), k * LANES);
    if kernel.is_identity() {
        out.copy_from_slice(v);
        return;
    }
    let xi = kernel.xi.midpoint();
    let delta = 1.0 / k as f64;
    ws.f.clear();
    ws.f.resize((k + 1) * LANES, 0.0);
    ws.g.clear();
    ws.g.resize((k + 1) * LANES, 0.0);
    let (f, g) = (&mut ws.f, &mut ws.g);
    for j in 0..k {
        let vj: &[f64; LANES] = v[j * LANES..(j + 1) * LANES].try_into().unwrap();
        let (head, tail) = f.split_at_mut((j + 1) * LANES);
        let fj: &[f64; LANES] = head[j * LANES..].try_into().unwrap();
        let fj1: &mut [f64; LANES] = (&mut tail[..LANES]).try_into().unwrap();
        let (ghead, gtail) = g.split_at_mut((j + 1) * LANES);
        let gj: &[f64; LANES] = ghead[j * LANES..].try_into().unwrap();
        let gj1: &mut [f64; LANES] = (&mut gtail[..LANES]).try_into().unwrap();
        for l in 0..LANES {
            fj1[l] = fj[l] + vj[l] * delta;
            gj1[l] = gj[l] + fj[l] * delta + 0.5 * vj[l] * delta * delta;
        }
    }
    // Accumulate the signed sum of the four (six with folding) G-evaluations
    // per output cell, sharing the located cell index across lanes.
    let add_g_at = |acc: &mut [f64; LANES], sign: f64, u: f64, f: &[f64], g: &[f64]| {
        if u <= 0.0 {
            return;
        }
        if u >= 1.0 {
            let base = k * LANES;
            let over = u - 1.0;
            let gb: &[f64; LANES] = g[base..base + LANES].try_into().unwrap();
            let fb: &[f64; LANES] = f[base..base + LANES].try_into().unwrap();
            for l in 0..LANES {
                acc[l] += sign * (gb[l] + fb[l] * over);
            }
        } else {
            let j = ((u * k as f64) as usize).min(k - 1);
            let r = u - j as f64 * delta;
            let base = j * LANES;
            let gb: &[f64; LANES] = g[base..base + LANES].try_into().unwrap();
            let fb: &[f64; LANES] = f[base..base + LANES].try_into().unwrap();
            let vb: &[f64; LANES] = v[base..base + LANES].try_into().unwrap();
            for l in 0..LANES {
                acc[l] += sign * (gb[l] + fb[l] * r + 0.5 * vb[l] * r * r);
            }
        }
    };
    let h = 0.5 * xi;
    let mut acc = [0.0f64; LANES];
    for i in 0..k {
        let a = i as f64 * delta;
        let b = (i + 1) as f64 * delta;
        acc = [0.0; LANES];
        let windows = |lo: f64, hi: f64, acc: &mut [f64; LANES]| {
            add_g_at(acc, 1.0, hi + h, f, g);
            add_g_at(acc, -1.0, lo + h, f, g);
            add_g_at(acc, -1.0, hi - h, f, g);
            add_g_at(acc, 1.0, lo - h, f, g);
        };
        windows(a, b, &mut acc);
        if a < xi {
            windows(-b, -a, &mut acc);
        }
        if b > 1.0 - xi {
            windows(2.0 - b, 2.0 - a, &mut acc);
        }
        let ob: &mut [f64; LANES] = (&mut out[i * LANES..(i + 1) * LANES]).try_into().unwrap();
        let scale = 1.0 / (xi * delta);
        for l in 0..LANES {
            ob[l] = acc[l] * scale;
        }
    }
}

/// L1-operator bound on the deviation of [`apply_noise_float`] from the exact
/// projected noise step, per unit of input L1 norm. Derivation: prefix sums
/// accumulate at most ~2 k eps relative error on F and ~4 k^2 eps delta on G;
/// each output cell combines 12 G-evaluations scaled by 1/(delta xi).
pub fn noise_float_error_bound(kernel: &NoiseKernel, grid: &UlamGrid) -> f64 {
    if kernel.is_identity() {
        return 0.0;
    }
    let k = grid.k as f64;
    64.0 * k * k * f64::EPSILON / kernel.xi.lo()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval::sum;

    fn grid(k: usize) -> UlamGrid {
        UlamGrid::new(k).unwrap()
    }

    fn mass(grid: &UlamGrid, v: &[IntervalScalar]) -> IntervalScalar {
        sum(v.iter().copied()) * grid.delta()
    }

    #[test]
    fn folding_map_basics() {
        assert_eq!(FoldingMap::fold_point(0.25), 0.25);
        assert_eq!(FoldingMap::fold_point(-0.25), 0.25);
        assert_eq!(FoldingMap::fold_point(1.25), 0.75);
        let f = FoldingMap::fold(IntervalScalar::new(-0.1, 0.2));
        assert!(f.lo() <= 0.0 + 1e-12 && f.hi() >= 0.2 - 1e-12);
        let id = FoldingMap::fold(IntervalScalar::new(0.2, 0.8));
        assert!(id.contains(0.2) && id.contains(0.8));
    }

    #[test]
    fn uniform_density_is_preserved() {
        let g = grid(64);
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.37)).unwrap();
        let v = vec![IntervalScalar::ONE; 64];
        let out = apply_noise_discrete(&kernel, &g, &v);
        for (i, c) in out.iter().enumerate() {
            assert!(c.contains(1.0), "cell {i} = {c}");
            assert!(c.width() < 1e-10);
        }
    }

    #[test]
    fn point_mass_at_zero_folds_to_doubled_density() {
        // Expected values derived by folding the kernel across 0 by hand:
        // density 2/xi on [0, xi/2 - delta), 0 beyond xi/2 + delta.
        let k = 256;
        let g = grid(k);
        let xi = 0.25;
        let kernel = NoiseKernel::uniform(IntervalScalar::point(xi)).unwrap();
        let mut v = vec![IntervalScalar::ZERO; k];
        v[0] = IntervalScalar::point(k as f64); // unit mass in the first cell
        let out = apply_noise_discrete(&kernel, &g, &v);
        let delta = 1.0 / k as f64;
        for i in 0..k {
            let x = (i as f64 + 0.5) * delta;
            if x < xi / 2.0 - 2.0 * delta {
                assert!(
                    out[i].contains(2.0 / xi) || (out[i].midpoint() - 2.0 / xi).abs() < 0.2 / xi,
                    "cell {i}: {}",
                    out[i]
                );
            }
            if x > xi / 2.0 + 2.0 * delta {
                assert!(out[i].hi() < 1e-9, "cell {i}: {}", out[i]);
            }
        }
        let m = mass(&g, &out);
        assert!(m.contains(1.0));
    }

    #[test]
    fn mass_is_conserved_for_random_signed_densities() {
        let k = 128;
        let g = grid(k);
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.09)).unwrap();
        let mut x = 0.6f64;
        let v: Vec<IntervalScalar> = (0..k)
            .map(|_| {
                x = (x * 73.91 + 0.33).rem_euclid(2.0) - 1.0;
                IntervalScalar::point(3.0 * x)
            })
            .collect();
        let before = mass(&g, &v);
        let out = apply_noise_discrete(&kernel, &g, &v);
        let after = mass(&g, &out);
        assert!(
            after.intersects(&before),
            "mass changed: {before} -> {after}"
        );
    }

    #[test]
    fn symmetric_input_gives_symmetric_output() {
        let k = 64;
        let g = grid(k);
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.3)).unwrap();
        let mut v = vec![IntervalScalar::ZERO; k];
        for i in 0..k {
            let d = (i as f64 - (k as f64 - 1.0) / 2.0).abs();
            v[i] = IntervalScalar::point(1.0 + d);
        }
        let out = apply_noise_discrete(&kernel, &g, &v);
        for i in 0..k / 2 {
            let a = out[i];
            let b = out[k - 1 - i];
            assert!(
                (a.midpoint() - b.midpoint()).abs() < 1e-9,
                "asymmetry at {i}: {a} vs {b}"
            );
        }
    }

    #[test]
    fn float_path_tracks_interval_path() {
        let k = 128;
        let g = grid(k);
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.11)).unwrap();
        let mut x = 0.21f64;
        let vf: Vec<f64> = (0..k)
            .map(|_| {
                x = (x * 31.7 + 0.57).rem_euclid(2.0) - 1.0;
                x
            })
            .collect();
        let vi: Vec<IntervalScalar> = vf.iter().map(|&a| IntervalScalar::point(a)).collect();
        let exact = apply_noise_discrete(&kernel, &g, &vi);
        let mut fast = Vec::new();
        let mut ws = NoiseScratch::default();
        apply_noise_float(&kernel, &g, &vf, &mut ws, &mut fast);
        let budget = noise_float_error_bound(&kernel, &g);
        let mut drift = 0.0;
        for i in 0..k {
            let d = if fast[i] < exact[i].lo() {
                exact[i].lo() - fast[i]
            } else if fast[i] > exact[i].hi() {
                fast[i] - exact[i].hi()
            } else {
                0.0
            };
            drift += d / k as f64;
        }
        let norm: f64 = vf.iter().map(|a| a.abs()).sum::<f64>() / k as f64;
        assert!(drift <= budget * norm, "drift {drift} > budget {budget}");
    }

    #[test]
    fn kernel_norm_values() {
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.01)).unwrap();
        let n = kernel_norms(&kernel, IntervalScalar::point(0.001)).unwrap();
        assert!(n.var_rho_xi.contains(200.0));
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.1)).unwrap();
        let n = kernel_norms(&kernel, IntervalScalar::point(1e-3)).unwrap();
        assert!(n.noise_after_proj_defect.contains(0.01));
        assert!(n.proj_defect_after_noise.contains(0.01));
    }
}
