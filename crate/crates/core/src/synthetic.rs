//! Seeded synthetic networks for experiments and property tests.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::network::{build_network, Link, Network, ODPair};

/// A `rows x cols` grid with links both ways between neighbours.
///
/// Free-flow times are 2-6 min, capacities 300-700 veh/hr, and lengths
/// give free-flow speeds of 30-45 mph.
pub fn grid_network(rows: usize, cols: usize, rng: &mut impl Rng) -> Result<Network> {
    let node = |r: usize, c: usize| r * cols + c + 1;
    let mut links = Vec::new();
    let mut add = |tail, head, rng: &mut dyn rand::RngCore| {
        let t0: f64 = rng.gen_range(2.0..6.0);
        let cap: f64 = rng.gen_range(300.0..700.0);
        let mph: f64 = rng.gen_range(30.0..45.0);
        let id = links.len() + 1;
        links.push(Link::new(id, tail, head, t0, cap, t0 / 60.0 * mph));
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                add(node(r, c), node(r, c + 1), rng);
                add(node(r, c + 1), node(r, c), rng);
            }
            if r + 1 < rows {
                add(node(r, c), node(r + 1, c), rng);
                add(node(r + 1, c), node(r, c), rng);
            }
        }
    }
    build_network(links)
}

/// `count` distinct O-D pairs over `nodes` with demand drawn from `demand`.
pub fn random_ods(nodes: &[usize], count: usize, demand: std::ops::Range<f64>, rng: &mut impl Rng) -> Vec<ODPair> {
    let mut pairs: Vec<(usize, usize)> = nodes
        .iter()
        .flat_map(|&o| nodes.iter().filter(move |&&d| d != o).map(move |&d| (o, d)))
        .collect();
    pairs.shuffle(rng);
    pairs.truncate(count);
    pairs.sort_unstable();
    pairs
        .into_iter()
        .map(|(o, d)| ODPair::new(o, d, rng.gen_range(demand.clone())))
        .collect()
}

/// The 16-node grid with 8 O-D pairs used for penetration sweeps.
pub fn synthetic_grid(seed: u64) -> Result<(Network, Vec<ODPair>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = grid_network(4, 4, &mut rng)?;
    let ods = random_ods(net.nodes(), 8, 150.0..450.0, &mut rng);
    Ok((net, ods))
}

/// A strongly connected random network: a directed ring plus random chords.
pub fn random_network(nodes: usize, links: usize, od_pairs: usize, rng: &mut impl Rng) -> Result<(Network, Vec<ODPair>)> {
    let nodes = nodes.max(2);
    let target = links.max(nodes);
    let mut out = Vec::with_capacity(target);
    let link = |id: usize, tail: usize, head: usize, rng: &mut dyn rand::RngCore| {
        let t0: f64 = rng.gen_range(1.0..10.0);
        let cap: f64 = rng.gen_range(100.0..1000.0);
        Link::new(id, tail, head, t0, cap, t0 / 60.0 * 35.0)
    };
    for i in 1..=nodes {
        out.push(link(i, i, i % nodes + 1, rng));
    }
    while out.len() < target {
        let t = rng.gen_range(1..=nodes);
        let h = rng.gen_range(1..=nodes);
        if t != h {
            out.push(link(out.len() + 1, t, h, rng));
        }
    }
    let net = build_network(out)?;
    let ods = random_ods(net.nodes(), od_pairs, 50.0..400.0, rng);
    Ok((net, ods))
}
