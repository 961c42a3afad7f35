//! Neighborhood graph over canonical positions and the locality penalties
//! that keep neighbor distances and scale gaps stable under deformation.

use crate::linalg::Vec3;
use crate::real::{lit, Real};

pub const DEFAULT_K: usize = 5;

/// k nearest canonical neighbors of every surfel (Euclidean, ties by index).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NeighborGraph {
    pub k: usize,
    pub neighbors: Vec<Vec<u32>>,
}

impl NeighborGraph {
    pub fn build<T: Real>(positions: &[Vec3<T>], k: usize) -> Self {
        let n = positions.len();
        let take = k.min(n.saturating_sub(1));
        let neighbors = (0..n)
            .map(|i| {
                let mut d: Vec<(T, u32)> = (0..n)
                    .filter(|&j| j != i)
                    .map(|j| ((positions[i] - positions[j]).norm_squared(), j as u32))
                    .collect();
                if take < d.len() {
                    d.select_nth_unstable_by(take, |a, b| {
                        a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1))
                    });
                    d.truncate(take);
                }
                d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                d.into_iter().map(|(_, j)| j).collect()
            })
            .collect();
        Self { k, neighbors }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, js)| js.iter().map(move |&j| (i, j as usize)))
    }
}

#[derive(Clone, Debug)]
pub struct LocalityLoss<T> {
    pub l_pos: T,
    pub l_cov: T,
    pub d_canonical_positions: Vec<Vec3<T>>,
    pub d_deformed_positions: Vec<Vec3<T>>,
    pub d_canonical_scales: Vec<[T; 2]>,
    pub d_deformed_scales: Vec<[T; 2]>,
}

fn l1_and_sign<T: Real, const N: usize>(a: [T; N], b: [T; N]) -> (T, [T; N]) {
    let mut s = [T::zero(); N];
    let mut d = T::zero();
    for k in 0..N {
        let v = a[k] - b[k];
        d += v.abs();
        s[k] = v.sign0();
    }
    (d, s)
}

/// Edge-averaged `| ‖a_i − a_j‖₁ − ‖â_i − â_j‖₁ |` for positions and scales.
pub fn loss_locality<T: Real>(
    canonical_positions: &[Vec3<T>],
    deformed_positions: &[Vec3<T>],
    canonical_scales: &[[T; 2]],
    deformed_scales: &[[T; 2]],
    graph: &NeighborGraph,
) -> LocalityLoss<T> {
    let n = canonical_positions.len();
    assert!(
        deformed_positions.len() == n && canonical_scales.len() == n && deformed_scales.len() == n
    );
    assert_eq!(graph.len(), n, "neighbor graph is stale");
    let mut out = LocalityLoss {
        l_pos: T::zero(),
        l_cov: T::zero(),
        d_canonical_positions: vec![Vec3::zero(); n],
        d_deformed_positions: vec![Vec3::zero(); n],
        d_canonical_scales: vec![[T::zero(); 2]; n],
        d_deformed_scales: vec![[T::zero(); 2]; n],
    };
    let edges = graph.edge_count();
    if n < 2 || edges == 0 {
        return out;
    }
    let inv = T::one() / lit(edges as f64);
    for (i, j) in graph.edges() {
        let (dc, sc) = l1_and_sign(
            canonical_positions[i].to_array(),
            canonical_positions[j].to_array(),
        );
        let (dd, sd) = l1_and_sign(
            deformed_positions[i].to_array(),
            deformed_positions[j].to_array(),
        );
        let e = dc - dd;
        out.l_pos += e.abs();
        let g = e.sign0() * inv;
        let gc = Vec3::from_array(sc) * g;
        let gd = Vec3::from_array(sd) * g;
        out.d_canonical_positions[i] += gc;
        out.d_canonical_positions[j] -= gc;
        out.d_deformed_positions[i] -= gd;
        out.d_deformed_positions[j] += gd;

        let (dc, sc) = l1_and_sign(canonical_scales[i], canonical_scales[j]);
        let (dd, sd) = l1_and_sign(deformed_scales[i], deformed_scales[j]);
        let e = dc - dd;
        out.l_cov += e.abs();
        let g = e.sign0() * inv;
        for k in 0..2 {
            out.d_canonical_scales[i][k] += sc[k] * g;
            out.d_canonical_scales[j][k] -= sc[k] * g;
            out.d_deformed_scales[i][k] -= sd[k] * g;
            out.d_deformed_scales[j][k] += sd[k] * g;
        }
    }
    out.l_pos *= inv;
    out.l_cov *= inv;
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> Vec<Vec3<f64>> {
        (0..n).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect()
    }

    #[test]
    fn graph_shape() {
        let g = NeighborGraph::build(&line(7), 5);
        assert_eq!(g.neighbors[0], vec![1, 2, 3, 4, 5]);
        // ties at distance 1 and 2 resolved by index
        assert_eq!(g.neighbors[3], vec![2, 4, 1, 5, 0]);
        assert!(g.edges().all(|(i, j)| i != j));
        let small = NeighborGraph::build(&line(3), 5);
        assert!(small.neighbors.iter().all(|v| v.len() == 2));
        assert_eq!(NeighborGraph::build(&line(1), 5).edge_count(), 0);
    }

    #[test]
    fn identity_and_translation_vanish() {
        let p: Vec<Vec3<f64>> = (0..12)
            .map(|i| Vec3::new((i * 7 % 5) as f64, (i * 3 % 4) as f64, i as f64 * 0.1))
            .collect();
        let s: Vec<[f64; 2]> = (0..12).map(|i| [0.01 * i as f64, 0.02]).collect();
        let g = NeighborGraph::build(&p, 5);
        let id = loss_locality(&p, &p, &s, &s, &g);
        assert_eq!((id.l_pos, id.l_cov), (0.0, 0.0));
        let shifted: Vec<Vec3<f64>> = p.iter().map(|&q| q + Vec3::new(0.25, -0.5, 1.0)).collect();
        let t = loss_locality(&p, &shifted, &s, &s, &g);
        assert!(t.l_pos.abs() < 1e-12);
    }

    #[test]
    fn single_surfel_has_no_loss() {
        let p = line(1);
        let g = NeighborGraph::build(&p, 5);
        let l = loss_locality(
            &p,
            &[Vec3::new(3.0, 0.0, 0.0)],
            &[[1.0, 1.0]],
            &[[2.0, 2.0]],
            &g,
        );
        assert_eq!((l.l_pos, l.l_cov), (0.0, 0.0));
    }
}
