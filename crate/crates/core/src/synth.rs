//! Random gate-passing networks for property tests and benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::lossmodel;
use crate::netmodel::{validate_network, Branch, NetworkSpec, Piece, PwlCurve};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthOptions {
    pub branches: usize,
    /// Upper bound on pieces per source curve (at least one).
    pub max_pieces: usize,
    pub v_load_min: f64,
    pub v_load_max: f64,
}

impl SynthOptions {
    pub fn new(branches: usize) -> Self {
        Self {
            branches,
            max_pieces: 8,
            v_load_min: 50.0,
            v_load_max: 54.0,
        }
    }
}

/// Concave non-increasing curve: pieces meet at increasing breakpoints and
/// each one is steeper than the last.
pub fn random_curve(rng: &mut impl Rng, v_open: f64, pieces: usize) -> PwlCurve {
    let mut beta = -rng.gen_range(0.05..0.6);
    let mut gamma = v_open;
    let mut at = 0.0;
    let mut out = vec![Piece::new(beta, gamma)];
    for _ in 1..pieces {
        at += rng.gen_range(1.0..4.0);
        let next = beta - rng.gen_range(0.05..0.6);
        // continuous at `at`
        gamma += (beta - next) * at;
        beta = next;
        out.push(Piece::new(beta, gamma));
    }
    PwlCurve::new(out)
}

pub fn random_branch(rng: &mut impl Rng, name: String, opts: &SynthOptions) -> Branch {
    let pieces = rng.gen_range(1..=opts.max_pieces.max(1));
    let v_open = rng.gen_range(30.0..45.0_f64).min(opts.v_load_min * 0.95);
    let mut b = Branch::ideal(
        name,
        random_curve(rng, v_open, pieces),
        rng.gen_range(0.1..0.5),
    );
    b.rs = rng.gen_range(0.05..0.5);
    b.r_inductor = rng.gen_range(0.01..0.1);
    b.r_mosfet = rng.gen_range(0.01..0.05);
    b.r_diode = rng.gen_range(0.01..0.05);
    b.v_diode = rng.gen_range(0.3..0.8);
    b.alpha = rng.gen_range(0.001..0.005);
    b.lambda = rng.gen_range(0.5..2.0);
    b.mu = rng.gen_range(0.0..1.5);
    b.i_min = Some(rng.gen_range(0.1..0.3));
    b
}

/// Draws until the network validates and every branch passes the
/// convexity gate. The load draws 60 to 100 W per branch at `v_load_min`.
pub fn random_network(rng: &mut impl Rng, opts: &SynthOptions) -> NetworkSpec {
    loop {
        let branches: Vec<Branch> = (0..opts.branches)
            .map(|k| random_branch(rng, format!("s{}", k + 1), opts))
            .collect();
        let power: f64 = (0..opts.branches).map(|_| rng.gen_range(60.0..100.0)).sum();
        let net = NetworkSpec {
            branches,
            r_load: opts.v_load_min * opts.v_load_min / power,
            v_load_min: opts.v_load_min,
            v_load_max: opts.v_load_max,
            f_s: 1e5,
        };
        let gated = net
            .branches
            .iter()
            .all(|b| lossmodel::require_gate(b).is_ok());
        if gated && validate_network(&net).is_ok() {
            return net;
        }
    }
}

/// Reproducible batch of networks.
pub fn batch(seed: u64, count: usize, opts: &SynthOptions) -> Vec<NetworkSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| random_network(&mut rng, opts)).collect()
}
