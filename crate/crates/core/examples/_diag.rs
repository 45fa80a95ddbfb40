use ulamcert::contraction::iterate_norm_bound;
use ulamcert::dynamics::make_bz_map;
use ulamcert::interval::IntervalScalar;
use ulamcert::noise::NoiseKernel;
use ulamcert::ulam::{assemble, UlamGrid};

fn main() {
    let m = make_bz_map();
    for log2k in [10usize, 11, 12] {
        let g = UlamGrid::new(1 << log2k).unwrap();
        let op = assemble(&m, &g).unwrap();
        let kernel = NoiseKernel::uniform(IntervalScalar::point(0.0086)).unwrap();
        let t = std::time::Instant::now();
        let bounds = iterate_norm_bound(&op, &kernel, 40).unwrap();
        let dt = t.elapsed().as_secs_f64();
        let line: Vec<String> = bounds.iter().map(|b| format!("{:.3}", b.hi())).collect();
        println!("k=2^{log2k} ({dt:.1}s): {}", line.join(" "));
        let dc_xi = (1.0 / (1u64 << log2k) as f64) / 0.0086;
        println!("  delta_c/xi = {dc_xi:.4}");
    }
}
