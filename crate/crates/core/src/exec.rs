//! Replica execution.
//!
//! Replicas are indexed `0..count` and each derives its own random stream
//! from `(master seed, stream tag, replica index)`, so the output of
//! [`Executor::map`] does not depend on how work is scheduled. With the
//! `parallel` feature (default) work runs on a dedicated rayon pool; without
//! it, or with one thread, replicas run in index order on the caller's thread.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Random source used for all simulation work.
pub type SimRng = ChaCha8Rng;

/// Stream tags keep the tree, percolation and ball-choice randomness of a
/// replica independent of each other.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Tree = 1,
    Percolation = 2,
    Balls = 3,
    Exploration = 4,
    Regular = 5,
    Constants = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a tag into a 64-bit key.
pub fn mix_seed(master: u64, tag: u64) -> u64 {
    splitmix64(master ^ splitmix64(tag.wrapping_add(0x632B_E59B_D9B4_E019)))
}

/// RNG for replica `index` of stream `stream` under `master`.
pub fn replica_rng(master: u64, stream: Stream, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(master, stream as u64));
    rng.set_stream(index);
    rng
}

/// RNG from a plain seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Runs indexed, independent jobs, optionally on a thread pool.
pub struct Executor {
    threads: usize,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Executor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Executor").field("threads", &self.threads).finish()
    }
}

impl Executor {
    /// `threads == 0` means "use all available cores".
    pub fn new(threads: usize) -> Self {
        let threads = if threads == 0 {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        } else {
            threads
        };
        #[cfg(feature = "parallel")]
        {
            let pool = if threads > 1 {
                rayon::ThreadPoolBuilder::new().num_threads(threads).build().ok()
            } else {
                None
            };
            Executor { threads, pool }
        }
        #[cfg(not(feature = "parallel"))]
        {
            Executor { threads }
        }
    }

    pub fn sequential() -> Self {
        Self::new(1)
    }

    pub fn threads(&self) -> usize {
        self.threads
    }

    /// True when jobs actually run concurrently.
    pub fn is_parallel(&self) -> bool {
        #[cfg(feature = "parallel")]
        {
            self.pool.is_some()
        }
        #[cfg(not(feature = "parallel"))]
        {
            false
        }
    }

    /// Evaluates `job(i)` for `i in 0..count`; results are in index order.
    pub fn map<T, F>(&self, count: u64, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if let Some(pool) = &self.pool {
            use rayon::prelude::*;
            return pool.install(|| (0..count).into_par_iter().map(&job).collect());
        }
        (0..count).map(job).collect()
    }
}

impl Default for Executor {
    fn default() -> Self {
        Executor::sequential()
    }
}
