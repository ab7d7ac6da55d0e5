use faer::sparse::SparseColMatRef;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn lcg_vec(n: usize, seed: u64, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn dense(a: SparseColMatRef<'_, usize, f64>) -> Vec<Vec<f64>> {
    let d = a.to_dense();
    (0..d.nrows()).map(|i| (0..d.ncols()).map(|j| d[(i, j)]).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
