use mgmt_core::Exec;

/// Maps `f` over `0..n` on a pool of `jobs` workers (0 = all cores);
/// results keep index order.
pub fn map_bounded<T, F>(jobs: usize, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        let mut b = rayon::ThreadPoolBuilder::new();
        if jobs > 0 {
            b = b.num_threads(jobs);
        }
        if let Ok(pool) = b.build() {
            return pool.install(|| Exec::Parallel.map(n, f));
        }
    }
    let _ = jobs;
    Exec::Sequential.map(n, f)
}

/// Policy for the kernels inside one stage.
pub fn exec() -> Exec {
    Exec::default()
}
