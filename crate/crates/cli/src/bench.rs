//! Strong-scaling benchmark for basis assembly and the two basis
//! derivative products.

use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use msfv_core::{BoundaryConditionSet, CoarsePartition, MultiscaleBasis, TensorMesh, WorkerPool};

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub workers: usize,
    /// Median seconds for assembly, Y apply and X apply.
    pub assemble: f64,
    pub apply_y: f64,
    pub apply_x: f64,
    pub speedup: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub k: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    /// Whether every median is no larger than the one at the previous
    /// worker count.
    pub fn monotone(&self) -> bool {
        self.rows.windows(2).all(|w| {
            w[1].assemble <= w[0].assemble && w[1].apply_y <= w[0].apply_y && w[1].apply_x <= w[0].apply_x
        })
    }

    pub fn table(&self) -> String {
        let mut s = format!("k = {}\nworkers assemble_s apply_y_s apply_x_s speedup_assemble speedup_y speedup_x\n", self.k);
        for r in &self.rows {
            s.push_str(&format!(
                "{} {:.4} {:.4} {:.4} {:.2} {:.2} {:.2}\n",
                r.workers, r.assemble, r.apply_y, r.apply_x, r.speedup[0], r.speedup[1], r.speedup[2]
            ));
        }
        s
    }
}

/// Outputs of the three timed kernels, compared bitwise across workers.
#[derive(Debug, PartialEq)]
struct Outputs {
    basis: Vec<f64>,
    y: Vec<f64>,
    x: Vec<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Lagrange basis on a random model. Each worker count is checked against
/// the serial outputs before it is timed; `reps` runs give the median.
pub fn scaling_benchmark(cells: [usize; 3], block: [usize; 3], worker_counts: &[usize], reps: usize, seed: u64) -> Result<BenchReport> {
    if worker_counts.is_empty() || worker_counts.contains(&0) || reps == 0 {
        bail!("worker counts and repetitions must be at least 1");
    }
    let mesh = TensorMesh::new(cells, [1.0; 3])?;
    let partition = Arc::new(CoarsePartition::new(&mesh, block)?);
    let bcs = Arc::new(BoundaryConditionSet::lagrange(&partition));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m: Vec<f64> = (0..mesh.num_cells()).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let dm: Vec<f64> = (0..mesh.num_cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..bcs.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let w: Vec<f64> = (0..mesh.num_free_nodes()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let run = |pool: &WorkerPool| -> Result<(Outputs, [f64; 3])> {
        let t = Instant::now();
        let basis = MultiscaleBasis::assemble(&partition, &bcs, &m, pool)?;
        let ta = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let y = basis.derivative_y(&v, &m)?.apply(&dm);
        let ty = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let x = basis.derivative_x(&w, &m)?.apply(&dm);
        let tx = t.elapsed().as_secs_f64();
        Ok((Outputs { basis: basis.matrix().val().to_vec(), y, x }, [ta, ty, tx]))
    };

    let reference = run(&WorkerPool::serial())?.0;
    let mut rows: Vec<BenchRow> = Vec::with_capacity(worker_counts.len());
    for &workers in worker_counts {
        let pool = WorkerPool::new(workers)?;
        let (out, _) = run(&pool)?;
        if out != reference {
            bail!("outputs at {workers} workers differ from the serial run");
        }
        let mut times = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..reps {
            let (_, t) = run(&pool)?;
            for a in 0..3 {
                times[a].push(t[a]);
            }
        }
        let [a, y, x] = times.map(median);
        rows.push(BenchRow { workers, assemble: a, apply_y: y, apply_x: x, speedup: [1.0; 3] });
    }
    let base = rows.iter().find(|r| r.workers == 1).map(|r| [r.assemble, r.apply_y, r.apply_x]);
    if let Some(b) = base {
        for r in &mut rows {
            r.speedup = [b[0] / r.assemble, b[1] / r.apply_y, b[2] / r.apply_x];
        }
    }
    Ok(BenchReport { k: bcs.len(), rows })
}
