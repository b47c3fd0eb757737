use fedhpn_core::fl::{ClientExecutor, Sequential};
use fedhpn_core::model::ParamVector;
use fedhpn_core::Result;
use rayon::prelude::*;

/// Runs client tasks on a dedicated rayon pool. Results come back in client
/// order, so output is identical to [`Sequential`].
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(threads: usize) -> std::result::Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
        Ok(Self { pool })
    }
}

impl ClientExecutor for RayonExecutor {
    fn run(&self, n: usize, task: &(dyn Fn(usize) -> Result<ParamVector> + Sync)) -> Vec<Result<ParamVector>> {
        self.pool.install(|| (0..n).into_par_iter().map(task).collect())
    }
}

/// `Sequential` for one thread (or none given), a rayon pool otherwise.
pub fn executor(threads: Option<usize>) -> Box<dyn ClientExecutor> {
    match threads {
        Some(t) if t > 1 => match RayonExecutor::new(t) {
            Ok(e) => Box::new(e),
            Err(_) => Box::new(Sequential),
        },
        _ => Box::new(Sequential),
    }
}
