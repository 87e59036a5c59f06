//! Exact discrete optimal transport by min-cost flow.
//!
//! Successive shortest augmenting paths with Johnson potentials on the dense
//! bipartite network `source -> supply_i -> demand_j -> sink`. Capacities are
//! the (real-valued) masses, so each augmentation saturates a supply, a
//! demand, or cancels a reverse edge. The final potentials are a dual
//! certificate: every residual edge has non-negative reduced cost and every
//! edge carrying flow has reduced cost zero.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Maximum combined support size accepted by the solver.
pub const MAX_ATOMS: usize = 512;

const MASS_EPS: f64 = 1e-15;

#[derive(Debug, Clone)]
pub struct TransportSolution {
    pub cost: f64,
    pub plan: Matrix,
    /// Dual variables: `alpha_i + beta_j <= c_ij`.
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// `cost - (sum mu_i alpha_i + sum nu_j beta_j)`.
    pub duality_gap: f64,
    /// Largest reduced cost on an edge that carries flow.
    pub slackness_residual: f64,
    /// Largest violation of `alpha_i + beta_j <= c_ij`.
    pub dual_infeasibility: f64,
}

/// Optimal coupling of `mu` and `nu` under `cost` (`mu.len() x nu.len()`).
/// Both mass vectors are rescaled to sum to one.
pub fn solve_transport(mu: &[f64], nu: &[f64], cost: &Matrix) -> Result<TransportSolution> {
    let (n, m) = (mu.len(), nu.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidDistribution("empty support".into()));
    }
    if n + m > MAX_ATOMS {
        return Err(Error::Capacity {
            atoms: n + m,
            capacity: MAX_ATOMS,
        });
    }
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::InvalidInput(format!(
            "cost matrix is {}x{}, expected {n}x{m}",
            cost.rows(),
            cost.cols()
        )));
    }
    if cost.as_slice().iter().any(|c| !c.is_finite() || *c < 0.0) {
        return Err(Error::InvalidInput("transport costs must be finite and non-negative".into()));
    }
    let normalize = |w: &[f64]| -> Result<Vec<f64>> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(Error::InvalidDistribution("weights must be finite and non-negative".into()));
        }
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(Error::InvalidDistribution("weights sum to zero".into()));
        }
        Ok(w.iter().map(|x| x / s).collect())
    };
    let mu = normalize(mu)?;
    let nu = normalize(nu)?;

    let mut flow = Matrix::zeros(n, m);
    let mut supply = mu.clone();
    let mut demand = nu.clone();

    // node layout: 0 = source, 1..=n supply, n+1..=n+m demand, n+m+1 = sink
    let source = 0;
    let sink = n + m + 1;
    let nodes = n + m + 2;
    let sup = |i: usize| 1 + i;
    let dem = |j: usize| 1 + n + j;
    let mut potential = vec![0.0; nodes];

    let mut dist = vec![f64::INFINITY; nodes];
    let mut prev = vec![usize::MAX; nodes];
    let mut done = vec![false; nodes];

    loop {
        let remaining: f64 = supply.iter().sum();
        if remaining <= MASS_EPS || demand.iter().all(|d| *d <= MASS_EPS) {
            break;
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        dist[source] = 0.0;

        loop {
            // dense Dijkstra: pick the closest unsettled node
            let mut u = usize::MAX;
            let mut best = f64::INFINITY;
            for (v, (&d, &fin)) in dist.iter().zip(&done).enumerate() {
                if !fin && d < best {
                    best = d;
                    u = v;
                }
            }
            if u == usize::MAX {
                break;
            }
            done[u] = true;
            if u == sink {
                break;
            }
            let relax = |to: usize, c: f64, dist: &mut [f64], prev: &mut [usize]| {
                let nd = dist[u] + c + potential[u] - potential[to];
                if nd < dist[to] {
                    dist[to] = nd;
                    prev[to] = u;
                }
            };
            if u == source {
                for i in 0..n {
                    if supply[i] > MASS_EPS {
                        relax(sup(i), 0.0, &mut dist, &mut prev);
                    }
                }
            } else if u <= n {
                let i = u - 1;
                for j in 0..m {
                    if !done[dem(j)] {
                        relax(dem(j), cost[(i, j)], &mut dist, &mut prev);
                    }
                }
            } else if u < sink {
                let j = u - 1 - n;
                if demand[j] > MASS_EPS {
                    relax(sink, 0.0, &mut dist, &mut prev);
                }
                for i in 0..n {
                    if flow[(i, j)] > MASS_EPS && !done[sup(i)] {
                        relax(sup(i), -cost[(i, j)], &mut dist, &mut prev);
                    }
                }
            }
        }
        if !dist[sink].is_finite() {
            break;
        }
        let reach = dist[sink];
        for (p, &d) in potential.iter_mut().zip(&dist) {
            *p += d.min(reach);
        }

        // walk the path back and find the bottleneck
        let mut path = vec![sink];
        let mut v = sink;
        while v != source {
            v = prev[v];
            path.push(v);
        }
        path.reverse();
        let first_supply = path[1] - 1;
        let last_demand = path[path.len() - 2] - 1 - n;
        let mut delta = supply[first_supply].min(demand[last_demand]);
        for w in path[1..path.len() - 1].windows(2) {
            let (a, b) = (w[0], w[1]);
            if a > n {
                // demand -> supply: cancel flow
                delta = delta.min(flow[(b - 1, a - 1 - n)]);
            }
        }
        supply[first_supply] -= delta;
        demand[last_demand] -= delta;
        for w in path[1..path.len() - 1].windows(2) {
            let (a, b) = (w[0], w[1]);
            if a <= n {
                flow[(a - 1, b - 1 - n)] += delta;
            } else {
                let f = &mut flow[(b - 1, a - 1 - n)];
                *f -= delta;
                if *f < MASS_EPS {
                    *f = 0.0;
                }
            }
        }
    }

    let total: f64 = flow
        .as_slice()
        .iter()
        .zip(cost.as_slice())
        .map(|(f, c)| f * c)
        .sum();
    let alpha: Vec<f64> = (0..n).map(|i| -potential[sup(i)]).collect();
    let beta: Vec<f64> = (0..m).map(|j| potential[dem(j)]).collect();
    let dual: f64 = mu.iter().zip(&alpha).map(|(w, a)| w * a).sum::<f64>()
        + nu.iter().zip(&beta).map(|(w, b)| w * b).sum::<f64>();
    let mut slackness: f64 = 0.0;
    let mut infeasible: f64 = 0.0;
    for i in 0..n {
        for j in 0..m {
            let reduced = cost[(i, j)] - alpha[i] - beta[j];
            infeasible = infeasible.max(-reduced);
            if flow[(i, j)] > 1e-12 {
                slackness = slackness.max(reduced.abs());
            }
        }
    }
    Ok(TransportSolution {
        cost: total,
        plan: flow,
        alpha,
        beta,
        duality_gap: total - dual,
        slackness_residual: slackness,
        dual_infeasibility: infeasible.max(0.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_edge() {
        let c = Matrix::from_rows(&[vec![2.5]]);
        let s = solve_transport(&[1.0], &[1.0], &c).unwrap();
        assert_eq!(s.cost, 2.5);
        assert_eq!(s.plan[(0, 0)], 1.0);
    }

    #[test]
    fn picks_cheap_diagonal() {
        let c = Matrix::from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, 0.0, 1.0], vec![1.0, 1.0, 0.0]]);
        let w = [1.0 / 3.0; 3];
        let s = solve_transport(&w, &w, &c).unwrap();
        assert!(s.cost.abs() < 1e-15);
        for i in 0..3 {
            assert!((s.plan[(i, i)] - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unbalanced_sizes_with_reverse_edges() {
        // greedy would send supply 0 to demand 0 and then pay 10; optimum reroutes
        let c = Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 10.0]]);
        let s = solve_transport(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap();
        assert!((s.cost - 1.5).abs() < 1e-15);
        assert!(s.duality_gap.abs() < 1e-12);
        assert!(s.slackness_residual < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        let c = Matrix::zeros(2, 2);
        assert!(matches!(
            solve_transport(&[1.0, -0.5], &[0.5, 0.5], &c),
            Err(Error::InvalidDistribution(_))
        ));
        assert!(solve_transport(&[0.5, 0.5], &[1.0], &c).is_err());
        let big = Matrix::zeros(300, 300);
        assert!(matches!(
            solve_transport(&vec![1.0; 300], &vec![1.0; 300], &big),
            Err(Error::Capacity { .. })
        ));
    }
}
