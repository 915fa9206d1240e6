//! Conic covering of the state space and its intersection with the manifold
//! bands into quotient states.

use thiserror::Error;

use crate::isochron::{IsochronError, MuFunction};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("need at least two cones, got {0}")]
    TooFewCones(usize),
    #[error("no generator for dimension {n}; supply explicit cone matrices")]
    UnsupportedDimension { n: usize },
    #[error("cone {index} is not solid: no strictly interior direction found")]
    NotSolid { index: usize },
    #[error("cone matrix {index} has rows of mixed width")]
    RaggedMatrix { index: usize },
    #[error("point {x:?} is not covered by any cone")]
    NotCovered { x: Vec<f64> },
    #[error(transparent)]
    Isochron(#[from] IsochronError),
}

/// A solid pointed cone {x : E x >= 0 componentwise}. Generated planar cones
/// also carry the angular interval they were built from.
#[derive(Debug, Clone)]
pub struct Cone {
    /// 1-based cone index j.
    pub index: usize,
    /// Rows of E_j (half-space normals).
    pub rows: Vec<Vec<f64>>,
    /// [theta_lo, theta_hi) for generated 2-D sector cones.
    pub angular: Option<(f64, f64)>,
}

/// Quotient state R_{i,j}: band i intersected with cone j, carrying the
/// fixed inter-event lower bound of its band.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub band: usize,
    pub cone: usize,
    pub tau_lower: f64,
}

/// Equal-angle sector covering of the plane starting at angle 0. Only the
/// planar generator is shipped; higher dimensions take explicit matrices.
pub fn build_cones(m: usize, n: usize) -> Result<Vec<Cone>, PartitionError> {
    if m < 2 {
        return Err(PartitionError::TooFewCones(m));
    }
    if n != 2 {
        return Err(PartitionError::UnsupportedDimension { n });
    }
    let width = std::f64::consts::TAU / m as f64;
    Ok((1..=m)
        .map(|j| {
            let lo = width * (j - 1) as f64;
            let hi = width * j as f64;
            Cone {
                index: j,
                rows: vec![
                    vec![-lo.sin(), lo.cos()],
                    vec![hi.sin(), -hi.cos()],
                ],
                angular: Some((lo, hi)),
            }
        })
        .collect())
}

/// Wrap user-supplied constraint matrices, checking each cone is solid by
/// sampling for a strictly interior direction.
pub fn cones_from_matrices(matrices: Vec<Vec<Vec<f64>>>) -> Result<Vec<Cone>, PartitionError> {
    use rand::{Rng, SeedableRng};
    if matrices.len() < 2 {
        return Err(PartitionError::TooFewCones(matrices.len()));
    }
    let mut cones = Vec::with_capacity(matrices.len());
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x736f6c6964);
    for (k, rows) in matrices.into_iter().enumerate() {
        let index = k + 1;
        let n = rows.first().map(|r| r.len()).unwrap_or(0);
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(PartitionError::RaggedMatrix { index });
        }
        let mut solid = false;
        for _ in 0..200_000 {
            let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0f64)).collect();
            if rows
                .iter()
                .all(|r| r.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() > 1e-9)
            {
                solid = true;
                break;
            }
        }
        if !solid {
            return Err(PartitionError::NotSolid { index });
        }
        cones.push(Cone {
            index,
            rows,
            angular: None,
        });
    }
    Ok(cones)
}

/// Boundary-inclusive membership: E_j x >= 0 componentwise.
pub fn cone_contains(cone: &Cone, x: &[f64]) -> bool {
    cone.rows
        .iter()
        .all(|r| r.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() >= 0.0)
}

/// Combined state index: manifold band plus the lowest-index containing cone
/// (shared boundaries deterministically go to the lower cone index).
/// `None` when x lies outside the outermost manifold approximation.
pub fn region_index(
    mu: &MuFunction,
    cones: &[Cone],
    times: &[f64],
    x: &[f64],
) -> Result<Option<(usize, usize)>, PartitionError> {
    let band = match mu.region_membership(times, x)? {
        Some(b) => b,
        None => return Ok(None),
    };
    let cone = cones
        .iter()
        .find(|c| cone_contains(c, x))
        .ok_or_else(|| PartitionError::NotCovered { x: x.to_vec() })?;
    Ok(Some((band, cone.index)))
}

/// CSV rows (i, j, tau_lower, theta_lo, theta_hi) for the region table.
pub fn write_region_table_csv<W: std::io::Write>(
    w: &mut W,
    regions: &[Region],
    cones: &[Cone],
) -> std::io::Result<()> {
    writeln!(w, "band,cone,tau_lower,theta_lo,theta_hi")?;
    for r in regions {
        let (lo, hi) = cones
            .iter()
            .find(|c| c.index == r.cone)
            .and_then(|c| c.angular)
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .unwrap_or_default();
        writeln!(w, "{},{},{},{},{}", r.band, r.cone, r.tau_lower, lo, hi)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn quadrants_cover_the_plane() {
        let cones = build_cones(4, 2).unwrap();
        assert_eq!(cones.len(), 4);
        // (1, 1) lies in the first quadrant sector [0, pi/2)
        assert!(cone_contains(&cones[0], &[1.0, 1.0]));
        assert!(!cone_contains(&cones[2], &[1.0, 1.0]));
    }

    #[test]
    fn sixteen_sectors_have_equal_width() {
        let cones = build_cones(16, 2).unwrap();
        assert_eq!(cones.len(), 16);
        for c in &cones {
            let (lo, hi) = c.angular.unwrap();
            assert!((hi - lo - std::f64::consts::PI / 8.0).abs() < 1e-15);
        }
    }

    #[test]
    fn origin_is_in_every_cone() {
        for c in build_cones(7, 2).unwrap() {
            assert!(cone_contains(&c, &[0.0, 0.0]));
        }
    }

    #[test]
    fn sector_membership_by_angle() {
        let cones = build_cones(16, 2).unwrap();
        // x = (1, tan(pi/16)) has angle pi/16, inside [0, pi/8)
        let x = [1.0, (std::f64::consts::PI / 16.0).tan()];
        assert!(cone_contains(&cones[0], &x));
    }

    #[test]
    fn pointed_sectors_exclude_antipodes() {
        let cones = build_cones(16, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(10);
        for _ in 0..1000 {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let x = [a.cos(), a.sin()];
            let neg = [-x[0], -x[1]];
            for c in &cones {
                let strictly = |p: &[f64]| {
                    c.rows
                        .iter()
                        .all(|r| r.iter().zip(p).map(|(u, v)| u * v).sum::<f64>() > 1e-12)
                };
                assert!(
                    !(strictly(&x) && strictly(&neg)),
                    "antipodal points both interior to cone {}",
                    c.index
                );
            }
        }
    }

    #[test]
    fn random_unit_vectors_covered_exactly_once() {
        let cones = build_cones(16, 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(20);
        for _ in 0..10_000 {
            let a = rng.gen_range(0.0..std::f64::consts::TAU);
            let u = [a.cos(), a.sin()];
            let count = cones.iter().filter(|c| cone_contains(c, &u)).count();
            // interior of exactly one sector, or a shared boundary of two
            assert!(
                count == 1 || count == 2,
                "unit vector {u:?} contained in {count} cones"
            );
        }
    }

    #[test]
    fn boundary_tie_breaks_to_lower_index() {
        let cones = build_cones(8, 2).unwrap();
        // direction exactly on the boundary between sectors 1 and 2
        let a = std::f64::consts::TAU / 8.0;
        let x = [a.cos(), a.sin()];
        let hits: Vec<usize> = cones
            .iter()
            .filter(|c| cone_contains(c, &x))
            .map(|c| c.index)
            .collect();
        assert!(hits.contains(&1) || hits.contains(&2));
        let lowest = cones.iter().find(|c| cone_contains(c, &x)).unwrap();
        assert_eq!(lowest.index, hits.iter().copied().min().unwrap());
    }

    #[test]
    fn user_matrices_validated_for_solidity() {
        // two half-plane-ish cones in R^3: solid
        let ok = cones_from_matrices(vec![
            vec![vec![1.0, 0.0, 0.0]],
            vec![vec![-1.0, 0.0, 0.0]],
        ]);
        assert!(ok.is_ok());
        // contradictory rows: empty interior
        let bad = cones_from_matrices(vec![
            vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]],
            vec![vec![1.0, 0.0]],
        ]);
        assert!(matches!(bad, Err(PartitionError::NotSolid { index: 1 })));
    }

    #[test]
    fn generator_requires_plane_or_matrices() {
        assert!(matches!(
            build_cones(4, 3),
            Err(PartitionError::UnsupportedDimension { n: 3 })
        ));
        assert!(matches!(build_cones(1, 2), Err(PartitionError::TooFewCones(1))));
    }
}
