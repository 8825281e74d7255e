//! Built-in demonstration plants: the 10-node chain and the seeded 11-node network.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::firlin::BoolMat;
use crate::linalg::{spectral_radius, Mat};
use crate::plantmaps::GeneralizedPlant;

/// Chain: `A = ½I + ½Z`, `B2 = C1 = I`, `B1 = 1.1(E11 + E55) + 0.7E99 + 0.1I`, `ρ_u = 0.1`.
///
/// Regulated output `[x; √ρ_u u]`, full state measurement.
pub fn build_chain10() -> GeneralizedPlant {
    let n = 10;
    let rho_u: f64 = 0.1;
    let mut a = Mat::identity(n, n) * 0.5;
    for i in 1..n {
        a[(i, i - 1)] = 0.5;
    }
    let mut b1 = Mat::identity(n, n) * 0.1;
    b1[(0, 0)] += 1.1;
    b1[(4, 4)] += 1.1;
    b1[(8, 8)] += 0.7;
    let mut c1 = Mat::zeros(2 * n, n);
    c1.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
    let mut d12 = Mat::zeros(2 * n, n);
    d12.view_mut((n, 0), (n, n))
        .copy_from(&(Mat::identity(n, n) * rho_u.sqrt()));
    GeneralizedPlant::new(
        a,
        b1,
        Mat::identity(n, n),
        c1,
        Mat::identity(n, n),
        d12,
        Mat::zeros(n, n),
        rho_u,
        0.0,
    )
    .expect("chain constants satisfy the plant conditions")
}

/// Undirected physical edges of the 11-node network (0-based), an approximate reading of
/// the published topology sketch.
pub const NETWORK11_EDGES: [(usize, usize); 11] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 4),
    (1, 5),
    (5, 6),
    (6, 7),
    (3, 8),
    (8, 9),
    (9, 10),
    (6, 9),
];

/// Candidate bidirectional communication links of the 11-node network.
pub const NETWORK11_LINKS: [(usize, usize); 7] =
    [(0, 5), (2, 6), (4, 8), (7, 10), (0, 2), (5, 9), (2, 8)];

/// Seeded 11-node network plant with its base graph and candidate links.
#[derive(Clone, Debug)]
pub struct Network11 {
    pub plant: GeneralizedPlant,
    pub adjacency: BoolMat,
    pub links: Vec<(usize, usize)>,
    pub seed: u64,
}

impl Network11 {
    /// Number of nonempty architectures: `2^(actuators + sensors + links) − 1`.
    pub fn design_space_count(&self) -> u64 {
        let n = self.plant.n_actuators() + self.plant.n_sensors() + self.links.len();
        (1u64 << n) - 1
    }

    /// Adjacency as nested rows.
    pub fn adjacency_rows(&self) -> Vec<Vec<bool>> {
        (0..self.adjacency.nrows())
            .map(|i| {
                (0..self.adjacency.ncols())
                    .map(|j| self.adjacency[(i, j)])
                    .collect()
            })
            .collect()
    }
}

/// Adjacency (with self-loops) of the 11-node network.
pub fn network11_adjacency() -> BoolMat {
    let mut g = BoolMat::from_fn(11, 11, |i, j| i == j);
    for &(i, j) in &NETWORK11_EDGES {
        g[(i, j)] = true;
        g[(j, i)] = true;
    }
    g
}

/// Random `A` on the adjacency, rescaled to spectral radius 0.999; `C1 = [10I; 0]`,
/// `D12 = [0; 5I]`, `B1 = [I 0]`, `D21 = [0 0.1I]`, `B2 = C2 = I`.
pub fn build_network11(seed: u64) -> Result<Network11> {
    let n = 11;
    let adj = network11_adjacency();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if adj[(i, j)] {
                a[(i, j)] = rng.gen_range(-1.0..1.0);
            }
        }
    }
    let r = spectral_radius(&a);
    a *= 0.999 / r;
    let mut c1 = Mat::zeros(2 * n, n);
    c1.view_mut((0, 0), (n, n))
        .copy_from(&(Mat::identity(n, n) * 10.0));
    let mut d12 = Mat::zeros(2 * n, n);
    d12.view_mut((n, 0), (n, n))
        .copy_from(&(Mat::identity(n, n) * 5.0));
    let mut b1 = Mat::zeros(n, 2 * n);
    b1.view_mut((0, 0), (n, n)).copy_from(&Mat::identity(n, n));
    let mut d21 = Mat::zeros(n, 2 * n);
    d21.view_mut((0, n), (n, n))
        .copy_from(&(Mat::identity(n, n) * 0.1));
    let plant = GeneralizedPlant::new(
        a,
        b1,
        Mat::identity(n, n),
        c1,
        Mat::identity(n, n),
        d12,
        d21,
        25.0,
        0.01,
    )?;
    Ok(Network11 {
        plant,
        adjacency: adj,
        links: NETWORK11_LINKS.to_vec(),
        seed,
    })
}
