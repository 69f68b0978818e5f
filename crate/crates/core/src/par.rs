//! Data-parallel helpers. With the `parallel` feature these dispatch to
//! rayon; without it every mode runs sequentially. Results never depend on
//! the mode: each output element is computed by the same closure in the same
//! order of floating-point operations.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Execution mode for the data-parallel inner loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

// below this many elements the fork/join overhead dominates
#[cfg(feature = "parallel")]
const MIN_PARALLEL_LEN: usize = 256;

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// `out[i] = f(i)`.
pub fn fill<T, F>(exec: Exec, out: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() && out.len() >= MIN_PARALLEL_LEN {
        out.par_iter_mut().enumerate().for_each(|(i, o)| *o = f(i));
        return;
    }
    let _ = exec;
    for (i, o) in out.iter_mut().enumerate() {
        *o = f(i);
    }
}

/// Maps `f` over `items`, preserving input order.
pub fn map<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(usize, &T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let _ = exec;
    items.iter().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Runs `op` on a pool of `jobs` workers (ignored without `parallel`).
pub fn with_jobs<R: Send>(jobs: usize, op: impl FnOnce() -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    {
        match rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build() {
            Ok(pool) => pool.install(op),
            Err(err) => {
                log::warn!("could not build a {jobs}-thread pool ({err}); using the global pool");
                op()
            }
        }
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = jobs;
        op()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let items: Vec<f64> = (0..1000).map(|i| i as f64 * 0.1).collect();
        let a = map(Exec::Sequential, &items, |i, x| x.sin() * i as f64);
        let b = map(Exec::Parallel, &items, |i, x| x.sin() * i as f64);
        assert_eq!(a, b);

        let mut x = vec![0.0; 1000];
        let mut y = vec![0.0; 1000];
        fill(Exec::Sequential, &mut x, |i| (i as f64).sqrt());
        fill(Exec::Parallel, &mut y, |i| (i as f64).sqrt());
        assert_eq!(x, y);
    }

    #[test]
    fn pool_of_one_still_runs() {
        let v = with_jobs(1, || map(Exec::Parallel, &[1, 2, 3], |_, x| x * 2));
        assert_eq!(v, vec![2, 4, 6]);
    }
}
