//! Ulam projection and rigorous assembly of the projected transfer operator.
//!
//! The operator `pi_delta L pi_delta` is assembled row-band-wise: for each
//! monotone branch the preimages of all grid cut points are bracketed once by
//! bisection, and consecutive brackets delimit the preimage of each row band.
//! Overlap lengths with the grid cells give entry enclosures whose slack
//! telescopes, so every column sum is an interval containing 1.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{MapModel, Monotonicity};
use crate::error::Error;
use crate::interval::{sum, IntervalScalar};
use crate::noise::{apply_noise_discrete, apply_noise_float, NoiseKernel, NoiseScratch};

/// Homogeneous partition of [0,1] into `k` cells of width `1/k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UlamGrid {
    pub k: usize,
}

impl UlamGrid {
    pub fn new(k: usize) -> Result<Self, Error> {
        if k < 2 {
            return Err(Error::Config(format!("grid needs at least 2 cells, got {k}")));
        }
        Ok(UlamGrid { k })
    }

    /// Cell width as an interval (exact for power-of-two k).
    pub fn delta(&self) -> IntervalScalar {
        if self.k.is_power_of_two() {
            IntervalScalar::point(1.0 / self.k as f64)
        } else {
            IntervalScalar::ONE / IntervalScalar::point(self.k as f64)
        }
    }

    /// Enclosure of the i-th cell boundary i/k.
    pub fn boundary(&self, i: usize) -> IntervalScalar {
        let v = i as f64 / self.k as f64;
        if self.k.is_power_of_two() {
            IntervalScalar::point(v)
        } else {
            IntervalScalar::new(v.next_down(), v.next_up())
        }
    }

    pub fn cell(&self, i: usize) -> IntervalScalar {
        IntervalScalar::new(self.boundary(i).lo(), self.boundary(i + 1).hi())
    }

    /// Index of the cell containing `x` (boundary points go right).
    pub fn locate(&self, x: f64) -> usize {
        ((x * self.k as f64) as usize).min(self.k - 1)
    }
}

impl UlamGrid {
    /// L1 norm of a grid density vector (interval values).
    pub fn l1_norm(&self, v: &[IntervalScalar]) -> IntervalScalar {
        sum(v.iter().map(|c| c.abs())) * self.delta()
    }

    /// Upward-rounded L1 norm of a float grid density.
    pub fn l1_norm_float(&self, v: &[f64]) -> f64 {
        let s: f64 = v.iter().map(|a| a.abs()).sum();
        let s = s * (1.0 + 4.0 * v.len() as f64 * f64::EPSILON);
        s / self.k as f64
    }
}

/// Conditional expectation onto piecewise constants: cell `i` receives the
/// certified average of `f` over it. With an antiderivative the averages are
/// exact up to rounding; otherwise the sampler is refined `subdivisions`
/// times per cell and hulled.
pub fn project(
    grid: &UlamGrid,
    f: &dyn Fn(IntervalScalar) -> IntervalScalar,
    antiderivative: Option<&dyn Fn(IntervalScalar) -> IntervalScalar>,
    subdivisions: u32,
) -> Vec<IntervalScalar> {
    let delta = grid.delta();
    (0..grid.k)
        .map(|i| {
            let a = grid.boundary(i);
            let b = grid.boundary(i + 1);
            match antiderivative {
                Some(big_f) => (big_f(b) - big_f(a)) / delta,
                None => {
                    let mut acc: Option<IntervalScalar> = None;
                    let n = 1usize << subdivisions;
                    for t in 0..n {
                        let lo = a.lo() + (b.hi() - a.lo()) * t as f64 / n as f64;
                        let hi = a.lo() + (b.hi() - a.lo()) * (t + 1) as f64 / n as f64;
                        let v = f(IntervalScalar::new(lo, hi));
                        acc = Some(match acc {
                            None => v,
                            Some(x) => x.hull(&v),
                        });
                    }
                    acc.unwrap()
                }
            }
        })
        .collect()
}

/// Projects a grid vector onto a coarser grid whose size divides `k`.
pub fn project_vector(fine: &UlamGrid, coarse: &UlamGrid, v: &[IntervalScalar]) -> Vec<IntervalScalar> {
    assert_eq!(fine.k % coarse.k, 0);
    let ratio = fine.k / coarse.k;
    let w = IntervalScalar::ONE / IntervalScalar::point(ratio as f64);
    (0..coarse.k)
        .map(|i| sum(v[i * ratio..(i + 1) * ratio].iter().copied()) * w)
        .collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatorEntry {
    pub row: u32,
    pub lo: f64,
    pub hi: f64,
}

/// Sparse column-stochastic enclosure of `pi_delta L pi_delta`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UlamOperator {
    pub grid: UlamGrid,
    pub map_id: String,
    pub map_hash: String,
    /// Column-major entries: `columns[j]` holds (row, lo, hi) with
    /// lo <= m(I_j ∩ T^-1 I_row)/m(I_j) <= hi.
    pub columns: Vec<Vec<OperatorEntry>>,
    /// Per-column sum enclosures (each contains 1).
    pub column_sums: Vec<IntervalScalar>,
    /// Largest per-column sum of entry radii; feeds the float-path error.
    pub max_column_radius: f64,
    /// Assembly-quality warnings (non-fatal).
    pub warnings: Vec<String>,
}

impl UlamOperator {
    pub fn nnz(&self) -> usize {
        self.columns.iter().map(|c| c.len()).sum()
    }

    /// Interval matrix-vector product (one application of `pi L pi`).
    pub fn matvec(&self, v: &[IntervalScalar]) -> Vec<IntervalScalar> {
        let mut out = vec![IntervalScalar::ZERO; self.grid.k];
        for (j, col) in self.columns.iter().enumerate() {
            let vj = v[j];
            if vj.lo() == 0.0 && vj.hi() == 0.0 {
                continue;
            }
            for e in col {
                out[e.row as usize] =
                    out[e.row as usize] + IntervalScalar::new(e.lo, e.hi) * vj;
            }
        }
        out
    }

    /// Midpoint float matrix-vector product (fast path).
    pub fn matvec_float(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, col) in self.columns.iter().enumerate() {
            let vj = v[j];
            if vj == 0.0 {
                continue;
            }
            for e in col {
                out[e.row as usize] += 0.5 * (e.lo + e.hi) * vj;
            }
        }
    }

    /// One step of `L_{delta,xi}`: sparse product then the noise step.
    pub fn apply(&self, kernel: &NoiseKernel, v: &[IntervalScalar]) -> Vec<IntervalScalar> {
        let w = self.matvec(v);
        apply_noise_discrete(kernel, &self.grid, &w)
    }

    /// Float fast path of [`UlamOperator::apply`].
    pub fn apply_float(
        &self,
        kernel: &NoiseKernel,
        v: &[f64],
        ws: &mut FloatWorkspace,
        out: &mut Vec<f64>,
    ) {
        ws.mat.clear();
        ws.mat.resize(self.grid.k, 0.0);
        self.matvec_float(v, &mut ws.mat);
        let mat = std::mem::take(&mut ws.mat);
        apply_noise_float(kernel, &self.grid, &mat, &mut ws.noise, out);
        ws.mat = mat;
    }

    /// Compact midpoint view of the operator for the float iterate kernels.
    pub fn float_view(&self) -> FloatView {
        let mut col_ptr = Vec::with_capacity(self.grid.k + 1);
        let mut rows = Vec::new();
        let mut mids = Vec::new();
        col_ptr.push(0u32);
        for col in &self.columns {
            for e in col {
                rows.push(e.row);
                mids.push(0.5 * (e.lo + e.hi));
            }
            col_ptr.push(rows.len() as u32);
        }
        FloatView {
            k: self.grid.k,
            col_ptr,
            rows,
            mids,
        }
    }

    /// L1-operator bound on the per-step deviation of the float path from the
    /// exact discretized step (matrix enclosure radius + summation rounding).
    pub fn float_step_error(&self, kernel: &NoiseKernel) -> f64 {
        let k = self.grid.k as f64;
        let gamma = 4.0 * k * f64::EPSILON * (1.0 + self.max_column_radius);
        self.max_column_radius + gamma + crate::noise::noise_float_error_bound(kernel, &self.grid)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), Error> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Assembles the enclosure of `pi_delta L pi_delta` for a map model.
pub fn assemble(map: &MapModel, grid: &UlamGrid) -> Result<UlamOperator, Error> {
    let k = grid.k;
    let delta_f = 1.0 / k as f64;
    // Brackets are driven to evaluation resolution: entry slack telescopes
    // into the column sums, so tight cut preimages keep them near width zero.
    let tol = 0.0;
    let mut warnings = Vec::new();

    // Per-branch contributions, computed independently and merged.
    let mut contributions: Vec<Vec<(u32, u32, f64, f64)>> = Vec::new(); // (row, col, lo, hi)
    for (bi, branch) in map.branches.iter().enumerate() {
        match branch.monotonicity {
            Monotonicity::Constant => {
                let value = branch.eval(branch.domain(), &map.params)?;
                let rows: Vec<u32> = {
                    let r0 = grid.locate(value.lo());
                    let r1 = grid.locate(value.hi());
                    (r0..=r1).map(|r| r as u32).collect()
                };
                let certain = rows.len() == 1;
                let (p, q) = branch.outer();
                let j0 = grid.locate(p);
                let j1 = grid.locate(q.min(1.0 - 0.5 * delta_f));
                let mut entries = Vec::new();
                for j in j0..=j1 {
                    let cell = grid.cell(j);
                    let cover_lo = overlap_len(p, q, cell.lo(), cell.hi(), false);
                    let cover_hi = overlap_len(p, q, cell.lo(), cell.hi(), true);
                    for &r in &rows {
                        let lo = if certain {
                            (cover_lo / delta_f).next_down().clamp(0.0, 1.0)
                        } else {
                            0.0
                        };
                        let hi = ((cover_hi / delta_f).next_up()).min(1.0);
                        entries.push((r, j as u32, lo.max(0.0), hi));
                    }
                }
                contributions.push(entries);
            }
            _ => {
                // Bracket the preimages of all k+1 cut points in parallel.
                let brackets: Vec<(f64, f64)> = (0..=k)
                    .into_par_iter()
                    .map(|i| {
                        let y = i as f64 / k as f64;
                        map.preimage_bracket(bi, y, tol)
                            .map(|b| (b.lo, b.hi))
                            .unwrap_or((branch.outer().0, branch.outer().1))
                    })
                    .collect();
                let wide = brackets
                    .iter()
                    .filter(|(lo, hi)| hi - lo > delta_f)
                    .count();
                if wide > 0 {
                    warnings.push(format!(
                        "branch {bi}: {wide} preimage brackets wider than one cell"
                    ));
                }
                let increasing = matches!(branch.monotonicity, Monotonicity::Increasing);
                let mut entries = Vec::new();
                for row in 0..k {
                    // Band preimage endpoints for this row.
                    let (bl, br) = if increasing {
                        (brackets[row], brackets[row + 1])
                    } else {
                        (brackets[row + 1], brackets[row])
                    };
                    let (outer_lo, outer_hi) = (bl.0, br.1);
                    let (inner_lo, inner_hi) = (bl.1, br.0);
                    if outer_hi <= outer_lo {
                        continue;
                    }
                    let j0 = grid.locate(outer_lo);
                    let j1 = grid.locate(outer_hi.min(1.0 - 0.5 * delta_f));
                    for j in j0..=j1 {
                        let cell = grid.cell(j);
                        let hi = (overlap_len(outer_lo, outer_hi, cell.lo(), cell.hi(), true)
                            / delta_f)
                            .next_up();
                        let lo = if inner_hi > inner_lo {
                            (overlap_len(inner_lo, inner_hi, cell.lo(), cell.hi(), false)
                                / delta_f)
                                .next_down()
                        } else {
                            0.0
                        };
                        if hi > 0.0 {
                            entries.push((row as u32, j as u32, lo.clamp(0.0, 1.0), hi.min(1.0)));
                        }
                    }
                }
                contributions.push(entries);
            }
        }
    }

    let mut columns: Vec<Vec<OperatorEntry>> = vec![Vec::new(); k];
    for entries in contributions {
        for (row, col, lo, hi) in entries {
            columns[col as usize].push(OperatorEntry { row, lo, hi });
        }
    }
    // Merge duplicate rows within a column (adjacent bands can both touch a
    // cell boundary; different branches can hit the same (row, col)).
    for col in &mut columns {
        col.sort_by_key(|e| e.row);
        let mut merged: Vec<OperatorEntry> = Vec::with_capacity(col.len());
        for e in col.drain(..) {
            match merged.last_mut() {
                Some(last) if last.row == e.row => {
                    let s = IntervalScalar::new(last.lo, last.hi)
                        + IntervalScalar::new(e.lo, e.hi);
                    last.lo = s.lo().clamp(0.0, 1.0);
                    last.hi = s.hi().clamp(last.lo, 1.0);
                }
                _ => merged.push(e),
            }
        }
        *col = merged;
    }

    let column_sums: Vec<IntervalScalar> = columns
        .iter()
        .map(|col| sum(col.iter().map(|e| IntervalScalar::new(e.lo, e.hi))))
        .collect();
    let mut max_column_radius = 0.0f64;
    for (j, s) in column_sums.iter().enumerate() {
        if !(s.lo() <= 1.0 + 1e-9 && s.hi() >= 1.0 - 1e-9) {
            warnings.push(format!("column {j} sum {s} does not obviously contain 1"));
        }
        let rad: f64 = columns[j].iter().map(|e| (e.hi - e.lo) * 0.5).sum();
        max_column_radius = max_column_radius.max(rad);
    }

    Ok(UlamOperator {
        grid: *grid,
        map_id: map.id.clone(),
        map_hash: map.content_hash(),
        columns,
        column_sums,
        max_column_radius,
        warnings,
    })
}

/// Length of [a,b] ∩ [c,d], rounded up or down.
fn overlap_len(a: f64, b: f64, c: f64, d: f64, round_up: bool) -> f64 {
    let lo = a.max(c);
    let hi = b.min(d);
    if hi <= lo {
        return 0.0;
    }
    let len = hi - lo;
    if round_up {
        len.next_up()
    } else {
        len.next_down().max(0.0)
    }
}

/// Reusable buffers for the float fast path.
#[derive(Default)]
pub struct FloatWorkspace {
    mat: Vec<f64>,
    noise: NoiseScratch,
}

/// Column-compressed midpoint matrix for the blocked iterate kernels.
pub struct FloatView {
    pub k: usize,
    pub col_ptr: Vec<u32>,
    pub rows: Vec<u32>,
    pub mids: Vec<f64>,
}

impl FloatView {
    /// Blocked scatter product over [`crate::noise::LANES`] interleaved
    /// vectors at once.
    pub fn matvec_block(&self, v: &[f64], out: &mut [f64]) {
        use crate::noise::LANES;
        out.fill(0.0);
        for j in 0..self.k {
            let start = self.col_ptr[j] as usize;
            let end = self.col_ptr[j + 1] as usize;
            let vb: [f64; LANES] = v[j * LANES..(j + 1) * LANES].try_into().unwrap();
            for t in start..end {
                let m = self.mids[t];
                let obase = self.rows[t] as usize * LANES;
                let ob: &mut [f64; LANES] =
                    (&mut out[obase..obase + LANES]).try_into().unwrap();
                for l in 0..LANES {
                    ob[l] += m * vb[l];
                }
            }
        }
    }
}

/// Loads the operator from the cache if the content hash matches, otherwise
/// assembles and stores it.
pub fn assemble_cached(
    map: &MapModel,
    grid: &UlamGrid,
    cache_dir: Option<&std::path::Path>,
) -> Result<UlamOperator, Error> {
    let key = format!("{}-k{}.op.json", map.content_hash(), grid.k);
    if let Some(dir) = cache_dir {
        let path = dir.join(&key);
        if path.exists() {
            let op = UlamOperator::load(&path)?;
            if op.map_hash == map.content_hash() && op.grid.k == grid.k {
                return Ok(op);
            }
        }
    }
    let op = assemble(map, grid)?;
    if let Some(dir) = cache_dir {
        std::fs::create_dir_all(dir)?;
        op.save(&dir.join(&key))?;
    }
    Ok(op)
}
