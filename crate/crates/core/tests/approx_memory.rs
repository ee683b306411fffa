use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering::Relaxed};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use recmatch::approx::{solve_ipfp_approx, ApproxConfig};
use recmatch::equilibrium::SolverConfig;
use recmatch::market::Direction;
use recmatch::mf::FactorModel;

struct Counting;

static LIVE: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);
static LARGEST: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let live = LIVE.fetch_add(layout.size(), Relaxed) + layout.size();
            PEAK.fetch_max(live, Relaxed);
            LARGEST.fetch_max(layout.size(), Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        LIVE.fetch_sub(layout.size(), Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

fn random_model(n: usize, d: usize, direction: Direction, rng: &mut ChaCha8Rng) -> FactorModel {
    let mut m = FactorModel::zeros(n, n, d, direction);
    for v in m.u_x.as_mut_slice().iter_mut().chain(m.v_y.as_mut_slice()) {
        *v = rng.random_range(-0.5..0.5);
    }
    m
}

#[test]
fn never_allocates_a_dense_buffer() {
    let n = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mxy = random_model(n, 4, Direction::XToY, &mut rng);
    let myx = random_model(n, 4, Direction::YToX, &mut rng);
    let config = SolverConfig { tol: 1e-8, ..Default::default() };
    let aconfig = ApproxConfig { top_m: 16, tail_samples: 32, ..Default::default() };
    // warm the thread pool so its setup is not attributed to the solver
    solve_ipfp_approx(&mxy, &myx, &config, &ApproxConfig { top_m: 4, tail_samples: 4, ..aconfig.clone() })
        .unwrap();

    let base = LIVE.load(Relaxed);
    PEAK.store(base, Relaxed);
    LARGEST.store(0, Relaxed);
    let solution = solve_ipfp_approx(&mxy, &myx, &config, &aconfig).unwrap();
    let peak = PEAK.load(Relaxed) - base;
    let largest = LARGEST.load(Relaxed);
    let dense = n * n * std::mem::size_of::<f64>();
    println!("dense {dense} B, peak growth {peak} B, largest block {largest} B");
    assert!(solution.converged);
    assert!(largest < dense / 16, "largest allocation {largest} B");
    assert!(peak < dense / 4, "peak growth {peak} B");
}
