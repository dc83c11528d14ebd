//! Peak heap use of a landmark fit stays proportional to n·v.

use std::alloc::{GlobalAlloc, Layout, System};
use std::sync::atomic::{AtomicUsize, Ordering::Relaxed};

use kpf::data_io::{generate_toy, ToyDistribution, ToySpec};
use kpf::nystrom::fit_nystrom_with_draws;
use kpf::{sample_prior, KernelSpec, PriorSpec};

struct Counting;

static CURRENT: AtomicUsize = AtomicUsize::new(0);
static PEAK: AtomicUsize = AtomicUsize::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size(), Relaxed) + layout.size();
            PEAK.fetch_max(now, Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size(), Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

#[test]
fn landmark_fit_memory_scales_with_n_times_v() {
    let n = 2000;
    let v = 50;
    let spec = ToySpec {
        distribution: ToyDistribution::Ring { radius: 1.0, noise: 0.05 },
        seed: 1,
    };
    let x = generate_toy(&spec, n).unwrap();
    let prior = PriorSpec::unit_sphere(3, 2);
    let z = sample_prior(&prior.distribution, n, prior.seed);
    let kin = KernelSpec::ntk(3).unwrap();
    let kout = KernelSpec::rbf(1.0).unwrap();

    let base = CURRENT.load(Relaxed);
    PEAK.store(base, Relaxed);
    let model = fit_nystrom_with_draws(&x, z, &prior, kin, kout, 1e-3, v).unwrap();
    let peak = PEAK.load(Relaxed) - base;

    let unit = n * v * std::mem::size_of::<f64>();
    let dense = n * n * std::mem::size_of::<f64>();
    eprintln!("peak {peak} bytes, n*v*8 = {unit}");
    assert_eq!(model.landmark_count(), v);
    assert!(peak <= 12 * unit, "peak {peak} bytes vs n*v*8 = {unit}");
    assert!(peak < dense, "peak {peak} bytes reaches a dense n x n matrix ({dense})");
}
