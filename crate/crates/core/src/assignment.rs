//! Minimum-cost perfect matching on small square cost matrices.
//!
//! Two routes are provided: exhaustive enumeration in lexicographic
//! permutation order (exact, used up to [`EXHAUSTIVE_MAX`]) and the
//! shortest-augmenting-path Hungarian method with row/column potentials.

/// Largest size for which the matching is found by enumerating permutations.
pub const EXHAUSTIVE_MAX: usize = 6;

/// Ties closer than this are resolved in favour of the lexicographically
/// smaller permutation.
pub const TIE_TOL: f64 = 1e-12;

/// Square cost matrix stored row-major.
#[derive(Debug, Clone)]
pub struct CostMatrix {
    n: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), n * n, "cost matrix must be n x n");
        Self { n, data }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Cost of `perm`, summed in row order so both solvers report
    /// bit-identical totals for the same permutation.
    pub fn cost_of(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

/// Optimal assignment `perm` (row `i` is matched to column `perm[i]`) and its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub perm: Vec<usize>,
    pub cost: f64,
}

/// Dispatches to the exhaustive solver for small sizes, Hungarian otherwise.
pub fn solve(cost: &CostMatrix) -> Assignment {
    if cost.size() <= EXHAUSTIVE_MAX {
        solve_exhaustive(cost)
    } else {
        solve_hungarian(cost)
    }
}

/// Rearranges `perm` into the next permutation in lexicographic order.
/// Returns false once the last permutation has been reached.
pub fn next_permutation(perm: &mut [usize]) -> bool {
    let n = perm.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && perm[i - 1] >= perm[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while perm[j] <= perm[i - 1] {
        j -= 1;
    }
    perm.swap(i - 1, j);
    perm[i..].reverse();
    true
}

pub fn solve_exhaustive(cost: &CostMatrix) -> Assignment {
    let n = cost.size();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = perm.clone();
    let mut best_cost = cost.cost_of(&perm);
    while next_permutation(&mut perm) {
        let c = cost.cost_of(&perm);
        if c < best_cost - TIE_TOL {
            best_cost = c;
            best.copy_from_slice(&perm);
        }
    }
    Assignment {
        perm: best,
        cost: best_cost,
    }
}

/// O(n^3) Hungarian method (shortest augmenting paths with potentials).
pub fn solve_hungarian(cost: &CostMatrix) -> Assignment {
    let n = cost.size();
    if n == 0 {
        return Assignment {
            perm: Vec::new(),
            cost: 0.0,
        };
    }
    // 1-based bookkeeping; index 0 is the virtual root column.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for i in 1..=n {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0usize; n];
    for j in 1..=n {
        perm[matched_row[j] - 1] = j - 1;
    }
    let total = cost.cost_of(&perm);
    Assignment { perm, cost: total }
}
